"""Parameter containers and the layers the models are assembled from."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from . import functional as F
from .tensor import Tensor, relu


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Minimal module tree; parameters are discovered from attributes.

    Attribute order defines parameter order, so ``named_parameters`` is
    stable across runs.
    """

    def named_parameters(self, prefix: str = ""):
        out: OrderedDict[str, Parameter] = OrderedDict()
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                out[path] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(path + "."))
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    out.update(m.named_parameters(f"{path}.{i}."))
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_params(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, p.data.copy()) for k, p in self.named_parameters().items())

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Affine map on the last axis; weight stored as [in, out]."""

    def __init__(self, din: int, dout: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(din)
        self.weight = Parameter(_uniform(rng, bound, (din, dout)))
        self.bias = Parameter(_uniform(rng, bound, (dout,))) if bias else None
        self.din, self.dout = din, dout

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)

    def macs(self, n: int) -> int:
        return self.din * self.dout * n


class Conv1d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None, channels_last: bool = False):
        bound = 1.0 / math.sqrt(cin * kernel)
        self.weight = Parameter(_uniform(rng, bound, (cout, cin, kernel)))
        self.bias = Parameter(_uniform(rng, bound, (cout,)))
        self.cin, self.cout, self.kernel, self.stride = cin, cout, kernel, stride
        self.padding = kernel // 2 if padding is None else padding
        self.channels_last = channels_last

    def __call__(self, x):
        return F.conv1d(x, self.weight, self.bias, self.stride, self.padding, self.channels_last)

    def out_length(self, length: int) -> int:
        return F.conv_output_length(length, self.kernel, self.stride, self.padding)

    def macs(self, length: int) -> int:
        return self.cin * self.cout * self.kernel * self.out_length(length)


class LayerNorm(Module):
    def __init__(self, dim: int, axis: int = -1):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.axis = axis

    def __call__(self, x):
        return F.layer_norm(x, self.weight, self.bias, axis=self.axis)


class MultiheadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"heads={heads} must divide dim={dim}")
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.dim, self.heads = dim, heads

    def __call__(self, query, key, value, attn_bias=None):
        out, _ = F.multi_head_attention(
            query, key, value, self.heads,
            self.q.weight, self.k.weight, self.v.weight, self.out.weight,
            self.q.bias, self.k.bias, self.v.bias, self.out.bias, attn_bias,
        )
        return out

    def macs(self, nq: int, nk: int) -> int:
        proj = self.q.macs(nq) + self.k.macs(nk) + self.v.macs(nk) + self.out.macs(nq)
        # scores q·k and weighted sum of values, across all heads
        return proj + 2 * nq * nk * self.dim


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x):
        return self.fc2(relu(self.fc1(x)))

    def macs(self, n: int) -> int:
        return self.fc1.macs(n) + self.fc2.macs(n)
