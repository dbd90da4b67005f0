"""J-peak detection in ballistocardiogram epochs: a dense U-Net + TPS
baseline and a query-based set-prediction detector, on a small numpy
autodiff engine."""

__version__ = "0.1.0"
