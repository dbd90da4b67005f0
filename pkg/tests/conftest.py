import numpy as np
import pytest

from bcgpeaks.models import BackboneConfig, DetrConfig, UNetConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# small architectures for fast gradient checks and training smoke tests
TINY_BB = BackboneConfig(widths=(4, 6, 8), kernels=(5, 3, 3), strides=(2, 2, 2))


@pytest.fixture
def tiny_unet_cfg():
    return UNetConfig(backbone=TINY_BB, bottleneck_width=10, decoder_widths=(8, 6, 4), seed=3)


@pytest.fixture
def tiny_detr_cfg():
    return DetrConfig(backbone=TINY_BB, d_model=8, encoder_layers=1, decoder_layers=1, heads=2,
                      ffn_dim=16, num_queries=8, aux_head=True, seed=3)
