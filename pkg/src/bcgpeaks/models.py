"""Shared convolutional backbone, the U-Net segmenter and the query detector.

Both detectors take a batch of normalized epochs ``[B, T]`` and share the
same backbone structure (each model owns its own backbone weights).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DetectionSet, from_normalized_time
from .diffcompute import functional as F
from .diffcompute.nn import Conv1d, FeedForward, LayerNorm, Linear, Module, MultiheadAttention, Parameter
from .diffcompute.tensor import Tensor, concat, relu, repeat_interleave, sigmoid, transpose, no_grad

EPOCH_SAMPLES_30S = 3990  # 30 s at 133 Hz


@dataclass
class BackboneConfig:
    widths: tuple[int, ...] = (32, 64, 128)
    kernels: tuple[int, ...] = (7, 5, 3)
    strides: tuple[int, ...] = (2, 2, 2)

    def __post_init__(self):
        self.widths, self.kernels, self.strides = (
            tuple(int(v) for v in self.widths),
            tuple(int(v) for v in self.kernels),
            tuple(int(v) for v in self.strides),
        )
        if not (len(self.widths) == len(self.kernels) == len(self.strides)):
            raise ValueError("widths, kernels and strides must have equal length")
        if min(self.widths + self.kernels + self.strides, default=0) < 1:
            raise ValueError("backbone widths, kernels and strides must be >= 1")
        if any(k % 2 == 0 for k in self.kernels):
            raise ValueError("backbone kernels must be odd")

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.strides))

    @property
    def out_channels(self) -> int:
        return self.widths[-1]


@dataclass
class UNetConfig:
    """Parameters sit mostly in the low-resolution bottleneck, where each
    costs the fewest FLOPs; the default is sized just above the default
    DETR in both parameters and FLOPs."""

    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    bottleneck_width: int = 416
    decoder_widths: tuple[int, ...] = (48, 24, 12)
    decoder_kernel: int = 3
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        self.decoder_widths = tuple(int(v) for v in self.decoder_widths)
        if len(self.decoder_widths) != len(self.backbone.widths):
            raise ValueError("decoder must mirror the encoder: one width per backbone stage")

    kind = "unet"


@dataclass
class DetrConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    d_model: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    ffn_dim: int = 256
    num_queries: int = 96
    aux_head: bool = True
    # width of the Gaussian cross-attention prior around each query's
    # reference point, in units of reference spacing; 0 disables the prior
    ref_window: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        if self.ref_window < 0:
            raise ValueError("ref_window must be >= 0")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.d_model % 2:
            raise ValueError("d_model must be even for sinusoidal encoding")
        if self.num_queries < 1:
            raise ValueError("num_queries must be >= 1")

    kind = "detr"

    def check_capacity(self, epoch_seconds: float, min_rr: float):
        """Raise if K cannot cover the densest physiologically possible epoch."""
        need = math.floor(epoch_seconds / min_rr) + 1
        if self.num_queries < need:
            raise ValueError(
                f"num_queries={self.num_queries} < {need} possible beats "
                f"({epoch_seconds} s at min RR {min_rr} s)"
            )


def config_to_dict(cfg) -> dict:
    d = asdict(cfg)
    d["kind"] = cfg.kind
    return d


def config_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    cls = {"unet": UNetConfig, "detr": DetrConfig}[kind]
    return cls(**d)


def sinusoid(positions, d_model: int) -> np.ndarray:
    """Sinusoidal features ``[len(positions), d_model]`` at (possibly fractional) positions."""
    if d_model % 2:
        raise ValueError("d_model must be even")
    t = np.asarray(positions, dtype=np.float64).reshape(-1)
    i = np.arange(d_model // 2, dtype=np.float64)
    freq = 1.0 / 10000.0 ** (2.0 * i / d_model)
    ang = t[:, None] * freq[None, :]
    out = np.empty((t.size, d_model))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def positional_encoding(n_positions: int, d_model: int) -> np.ndarray:
    """Fixed sinusoidal table of shape [d_model, n_positions]."""
    return sinusoid(np.arange(n_positions), d_model).T


def reference_points(num_queries: int) -> np.ndarray:
    """Evenly spread normalized anchor locations, one per query."""
    return (np.arange(num_queries) + 0.5) / num_queries


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError("input must be a non-empty [T] or [B, T] array")
    return x


class ConvBlock(Module):
    """conv -> layer norm over channels -> ReLU."""

    def __init__(self, cin: int, cout: int, kernel: int, stride: int, rng):
        self.conv = Conv1d(cin, cout, kernel, rng, stride=stride, channels_last=True)
        self.norm = LayerNorm(cout)

    def __call__(self, x):
        return relu(self.norm(self.conv(x)))

    def macs(self, length: int) -> int:
        return self.conv.macs(length)


class DoubleConv(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng):
        self.first = ConvBlock(cin, cout, kernel, 1, rng)
        self.second = ConvBlock(cout, cout, kernel, 1, rng)

    def __call__(self, x):
        return self.second(self.first(x))

    def macs(self, length: int) -> int:
        return self.first.macs(length) + self.second.macs(length)


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        cin = 1
        self.stages = []
        for w, k, s in zip(cfg.widths, cfg.kernels, cfg.strides):
            self.stages.append(ConvBlock(cin, w, k, s, rng))
            cin = w

    def padded_length(self, n_samples: int) -> int:
        s = self.cfg.total_stride
        return -(-n_samples // s) * s

    def pad_input(self, x: np.ndarray) -> np.ndarray:
        lp = self.padded_length(x.shape[-1])
        return np.pad(x, ((0, 0), (0, lp - x.shape[-1])))[:, :, None]

    def features(self, xpad: Tensor) -> list[Tensor]:
        """Channel-last per-stage outputs ``[B, L_s, C_s]`` for a padded
        ``[B, Lp, 1]`` input."""
        outs = []
        h = xpad
        for stage in self.stages:
            h = stage(h)
            outs.append(h)
        return outs

    def __call__(self, x) -> Tensor:
        """Channel-last features ``[B, T', C]``."""
        x = _as_batch(x)
        return self.features(Tensor(self.pad_input(x)))[-1]

    def out_length(self, n_samples: int) -> int:
        return self.padded_length(n_samples) // self.cfg.total_stride

    def macs(self, n_samples: int) -> int:
        length = self.padded_length(n_samples)
        total = 0
        for stage in self.stages:
            total += stage.macs(length)
            length = stage.conv.out_length(length)
        return total


def backbone_forward(backbone: Backbone, x) -> Tensor:
    """Low-resolution features ``[B, C, ceil(T / total_stride)]``."""
    return transpose(backbone(x), (0, 2, 1))


# -- U-Net -----------------------------------------------------------------------
class UNet(Module):
    kind = "unet"

    def __init__(self, cfg: UNetConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        bb = cfg.backbone
        self.backbone = Backbone(bb, rng)
        wb = cfg.bottleneck_width
        k = cfg.decoder_kernel
        self.bottleneck = DoubleConv(bb.widths[-1], wb, k, rng)
        # skip sources from deep to shallow: stage outputs, then the raw input
        skip_ch = list(reversed((1,) + bb.widths[:-1]))
        self.decoder = []
        cin = wb
        for w, sc in zip(cfg.decoder_widths, skip_ch):
            self.decoder.append(DoubleConv(cin + sc, w, k, rng))
            cin = w
        self.head = Conv1d(cin, 1, 1, rng, channels_last=True)

    def logits(self, x) -> Tensor:
        x = _as_batch(x)
        n = x.shape[1]
        xpad = Tensor(self.backbone.pad_input(x))
        feats = self.backbone.features(xpad)
        skips = list(reversed([xpad] + feats[:-1]))
        h = feats[-1]
        h = self.bottleneck(h)
        for level, skip, s in zip(self.decoder, skips, reversed(self.cfg.backbone.strides)):
            h = concat([repeat_interleave(h, s, axis=1), skip], axis=2)
            h = level(h)
        out = self.head(h)
        return out[:, :n, 0]

    def __call__(self, x) -> Tensor:
        """Per-sample peak probability ``[B, T]``."""
        return sigmoid(self.logits(x))

    def param_split(self) -> tuple[int, int]:
        total = self.num_params()
        return total, self.backbone.num_params()

    def macs(self, n_samples: int) -> tuple[int, int]:
        bb = self.backbone.macs(n_samples)
        length = self.backbone.padded_length(n_samples) // self.cfg.backbone.total_stride
        total = bb + self.bottleneck.macs(length)
        for level, s in zip(self.decoder, reversed(self.cfg.backbone.strides)):
            length *= s
            total += level.macs(length)
        total += self.head.macs(length)
        return total, bb


def unet_forward(model: UNet, x) -> np.ndarray:
    """Inference-mode probabilities ``[B, T]`` (or ``[T]`` for 1-D input)."""
    single = np.asarray(x).ndim == 1
    with no_grad():
        probs = model(x).data
    return probs[0] if single else probs


# -- set-prediction detector ---------------------------------------------------------
class EncoderLayer(Module):
    def __init__(self, cfg: DetrConfig, rng):
        self.attn = MultiheadAttention(cfg.d_model, cfg.heads, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim, rng)
        self.norm2 = LayerNorm(cfg.d_model)

    def __call__(self, src, pos):
        qk = src + pos
        src = self.norm1(src + self.attn(qk, qk, src))
        return self.norm2(src + self.ffn(src))

    def macs(self, n: int) -> int:
        return self.attn.macs(n, n) + self.ffn.macs(n)


class DecoderLayer(Module):
    def __init__(self, cfg: DetrConfig, rng):
        self.self_attn = MultiheadAttention(cfg.d_model, cfg.heads, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.cross_attn = MultiheadAttention(cfg.d_model, cfg.heads, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim, rng)
        self.norm3 = LayerNorm(cfg.d_model)

    def __call__(self, tgt, query_pos, memory, pos, cross_bias=None):
        q = tgt + query_pos
        tgt = self.norm1(tgt + self.self_attn(q, q, tgt))
        tgt = self.norm2(tgt + self.cross_attn(tgt + query_pos, memory + pos, memory, cross_bias))
        return self.norm3(tgt + self.ffn(tgt))

    def macs(self, nq: int, nk: int) -> int:
        return self.self_attn.macs(nq, nq) + self.cross_attn.macs(nq, nk) + self.ffn.macs(nq)


@dataclass
class QueryOutputs:
    """Raw per-query predictions for a batch."""

    class_logits: np.ndarray  # [B, K, 2]; index 1 is the peak class
    locations: np.ndarray  # [B, K] in [0, 1]
    aux_probs: np.ndarray | None = None  # [B, T]


class Detr(Module):
    kind = "detr"

    def __init__(self, cfg: DetrConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d = cfg.d_model
        self.backbone = Backbone(cfg.backbone, rng)
        self.input_proj = Linear(cfg.backbone.out_channels, d, rng)
        self.encoder = [EncoderLayer(cfg, rng) for _ in range(cfg.encoder_layers)]
        self.decoder = [DecoderLayer(cfg, rng) for _ in range(cfg.decoder_layers)]
        self.decoder_norm = LayerNorm(d)
        # learnable query embeddings start at zero; each query's identity comes
        # from the encoding of its fixed reference point on the memory axis
        self.query_embed = Parameter(np.zeros((cfg.num_queries, d)))
        self.ref = reference_points(cfg.num_queries)
        self.class_head = Linear(d, 2, rng)
        self.loc_head = [Linear(d, d, rng), Linear(d, d, rng), Linear(d, 1, rng)]
        self.aux = Linear(d, 1, rng) if cfg.aux_head else None

    def encode(self, x: np.ndarray) -> Tensor:
        return self.input_proj(self.backbone(x))  # [B, T', D]

    def forward(self, x, with_aux: bool | None = None) -> dict[str, Tensor]:
        """Differentiable outputs: ``logits`` [B,K,2], ``loc`` [B,K], ``aux`` [B,T]."""
        x = _as_batch(x)
        nb, n = x.shape
        src = self.encode(x)
        pos = Tensor(positional_encoding(src.shape[1], self.cfg.d_model).T)
        memory = src
        for layer in self.encoder:
            memory = layer(memory, pos)
        centers = self.ref * (src.shape[1] - 1)  # reference points on the memory axis
        qpos = self.query_embed + Tensor(sinusoid(centers, self.cfg.d_model))
        bias = self.cross_attention_prior(src.shape[1])
        tgt = Tensor(np.zeros((nb, self.cfg.num_queries, self.cfg.d_model)))
        for layer in self.decoder:
            tgt = layer(tgt, qpos, memory, pos, bias)
        hs = self.decoder_norm(tgt)
        out = {"logits": self.class_head(hs)}
        h = hs
        for i, lin in enumerate(self.loc_head):
            h = lin(h)
            if i < len(self.loc_head) - 1:
                h = relu(h)
        # offset from the reference point in logit space
        out["loc"] = sigmoid(h[:, :, 0] + np.log(self.ref / (1.0 - self.ref)))
        use_aux = self.aux is not None if with_aux is None else with_aux
        if use_aux:
            if self.aux is None:
                raise ValueError("auxiliary head requested but not configured")
            aux_logit = self.aux(memory)[:, :, 0]  # [B, T']
            out["aux"] = sigmoid(F.interp_linear(aux_logit, n))
        return out

    __call__ = forward

    def cross_attention_prior(self, n_memory: int) -> np.ndarray | None:
        """Log-Gaussian logit bias ``[K, T']`` centred on each reference point."""
        if self.cfg.ref_window == 0:
            return None
        centers = self.ref * (n_memory - 1)
        sigma = self.cfg.ref_window * max(n_memory - 1, 1) / self.cfg.num_queries
        t = np.arange(n_memory, dtype=np.float64)
        return -0.5 * ((t[None, :] - centers[:, None]) / sigma) ** 2

    def param_split(self) -> tuple[int, int]:
        """(inference params, backbone params); the training-only aux head is excluded."""
        total = self.num_params() - (self.aux.num_params() if self.aux is not None else 0)
        return total, self.backbone.num_params()

    def macs(self, n_samples: int) -> tuple[int, int]:
        bb = self.backbone.macs(n_samples)
        n = self.backbone.out_length(n_samples)
        k = self.cfg.num_queries
        total = bb + self.input_proj.macs(n)
        total += sum(layer.macs(n) for layer in self.encoder)
        total += sum(layer.macs(k, n) for layer in self.decoder)
        total += self.class_head.macs(k) + sum(lin.macs(k) for lin in self.loc_head)
        return total, bb


def detr_forward(model: Detr, x, with_aux: bool = False) -> QueryOutputs:
    """Inference-mode query outputs; the aux branch is skipped unless asked for."""
    with no_grad():
        out = model.forward(x, with_aux=with_aux)
    return QueryOutputs(
        class_logits=out["logits"].data,
        locations=out["loc"].data,
        aux_probs=out["aux"].data if "aux" in out else None,
    )


def peak_probability(class_logits: np.ndarray) -> np.ndarray:
    z = class_logits - class_logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e[..., 1] / e.sum(axis=-1)


def detr_decode(class_logits: np.ndarray, locations: np.ndarray, n_samples: int,
                score_threshold: float = 0.5) -> DetectionSet:
    """Keep every query whose peak-class probability reaches the threshold.

    Operates on one epoch (``class_logits`` [K, 2], ``locations`` [K]). No
    duplicate suppression.
    """
    if not 0.0 < score_threshold < 1.0:
        raise ValueError("score_threshold must lie in (0, 1)")
    p = peak_probability(np.asarray(class_logits, dtype=np.float64))
    keep = p >= score_threshold
    times = from_normalized_time(np.asarray(locations, dtype=np.float64)[keep], n_samples)
    return DetectionSet(np.atleast_1d(times), p[keep])


def build_model(cfg):
    if isinstance(cfg, dict):
        cfg = config_from_dict(cfg)
    return {"unet": UNet, "detr": Detr}[cfg.kind](cfg)
