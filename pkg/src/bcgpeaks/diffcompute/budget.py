"""Parameter and FLOP accounting.

FLOPs are reported as twice the multiply-accumulate count of one forward
pass; activations, normalization and softmax exponentials are not counted.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ModelBudget:
    params_total: int
    params_backbone: int
    flops_total: int
    flops_backbone: int

    @property
    def params_head(self) -> int:
        return self.params_total - self.params_backbone

    @property
    def flops_head(self) -> int:
        return self.flops_total - self.flops_backbone


def linear_params(din: int, dout: int, bias: bool = True) -> int:
    return din * dout + (dout if bias else 0)


def linear_flops(din: int, dout: int, n: int) -> int:
    return 2 * din * dout * n


def conv1d_params(cin: int, cout: int, kernel: int, bias: bool = True) -> int:
    return cin * cout * kernel + (cout if bias else 0)


def count_budget(model_config, n_samples: int = 3990) -> ModelBudget:
    """Budget of the inference-time model for one epoch of ``n_samples``
    (default: 30 s at 133 Hz). A bare backbone config has no head."""
    import numpy as np

    from ..models import Backbone, BackboneConfig, build_model

    if isinstance(model_config, BackboneConfig):
        bb = Backbone(model_config, np.random.default_rng(0))
        p, m = bb.num_params(), bb.macs(n_samples)
        return ModelBudget(p, p, 2 * m, 2 * m)
    model = model_config if hasattr(model_config, "macs") else build_model(model_config)
    params_total, params_bb = model.param_split()
    macs_total, macs_bb = model.macs(n_samples)
    return ModelBudget(params_total, params_bb, 2 * macs_total, 2 * macs_bb)
