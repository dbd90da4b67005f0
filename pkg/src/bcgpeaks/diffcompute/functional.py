"""Fused differentiable ops built on :mod:`tensor`.

Layout conventions: convolutions take ``(batch, channels, length)`` (a
missing batch axis is accepted and restored); attention takes
``(batch, sequence, features)``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .. import _kernels
from .tensor import (ShapeError, Tensor, _node, _unbroadcast, as_tensor, matmul, concat, transpose,
                     reshape)

PROB_CLAMP = 1e-7


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = x - lse
    sm = np.exp(out)

    def backward(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), backward)


def layer_norm(a: Tensor, weight=None, bias=None, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize over one axis, then apply an optional per-feature affine.

    ``weight`` and ``bias`` must broadcast against ``a`` (their shape is
    the normalized axis extent, placed on ``axis``).
    """
    x = a.data
    if weight is not None and bias is not None and axis in (-1, x.ndim - 1):
        return _layer_norm_last(a, as_tensor(weight), as_tensor(bias), eps)
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    n = x.shape[axis]
    shape = [1] * x.ndim
    shape[axis] = n
    w = None if weight is None else as_tensor(weight)
    b = None if bias is None else as_tensor(bias)
    wd = 1.0 if w is None else w.data.reshape(shape)
    out = xhat * wd
    if b is not None:
        out = out + b.data.reshape(shape)
    red = tuple(i for i in range(x.ndim) if i != axis % x.ndim)

    def backward(g):
        gx = g * wd
        ga = rstd * (gx - gx.mean(axis=axis, keepdims=True)
                     - xhat * (gx * xhat).mean(axis=axis, keepdims=True))
        gw = None if w is None else (g * xhat).sum(axis=red).reshape(w.shape)
        gb = None if b is None else g.sum(axis=red).reshape(b.shape)
        return ga, gw, gb

    parents = (a, w if w is not None else Tensor(0.0), b if b is not None else Tensor(0.0))
    return _node(out, parents, backward)


def _layer_norm_last(a: Tensor, w: Tensor, b: Tensor, eps: float) -> Tensor:
    shape = a.shape
    c = shape[-1]
    out, xhat, rstd = _kernels.layer_norm_fwd(a.data.reshape(-1, c), w.data.reshape(c),
                                              b.data.reshape(c), eps)

    def backward(g):
        ga, gw, gb = _kernels.layer_norm_bwd(g.reshape(-1, c), xhat, rstd, w.data.reshape(c))
        return ga.reshape(shape), gw.reshape(w.shape), gb.reshape(b.shape)

    return _node(out.reshape(shape), (a, w, b), backward)


def conv_output_length(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, channels_last: bool = False) -> Tensor:
    """Cross-correlation with ``weight`` [Cout, Cin, k].

    ``x`` is [B, Cin, L] (or [Cin, L]); with ``channels_last`` it is
    [B, L, Cin] and the output is [B, L', Cout].
    """
    x = as_tensor(x)
    if channels_last:
        return _conv1d_nlc(x, as_tensor(weight), bias, stride, padding)
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 3:
        raise ShapeError("conv1d expects input [B, Cin, L]")
    out = transpose(_conv1d_nlc(transpose(x, (0, 2, 1)), as_tensor(weight), bias, stride, padding),
                    (0, 2, 1))
    return reshape(out, out.shape[1:]) if squeeze else out


def _conv1d_nlc(x: Tensor, weight: Tensor, bias, stride: int, padding: int) -> Tensor:
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError("conv1d expects input [B, L, Cin] and weight [Cout, Cin, k]")
    nb, length, cin = x.shape
    cout, wcin, k = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv1d channel mismatch: input {cin}, weight {wcin}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    lout = conv_output_length(length, k, stride, padding)
    if lout < 1:
        raise ShapeError(f"kernel {k} does not fit padded input of length {length + 2 * padding}")
    xd = x.data
    xp = np.pad(xd, ((0, 0), (padding, padding), (0, 0))) if padding else np.ascontiguousarray(xd)
    s0, s1, s2 = xp.strides
    # [B, Lout, k, Cin] window view copied into a GEMM-ready matrix
    cols = as_strided(xp, (nb, lout, k, cin), (s0, s1 * stride, s1, s2)).reshape(nb * lout, k * cin)
    wm = weight.data.transpose(0, 2, 1).reshape(cout, k * cin)
    out = cols @ wm.T
    if bias is not None:
        out += bias.data
    b = bias if bias is not None else Tensor(0.0)

    def backward(g):
        gm = g.reshape(nb * lout, cout)
        gw = None
        if weight.requires_grad:
            gw = (gm.T @ cols).reshape(cout, k, cin).transpose(0, 2, 1)
        gb = gm.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad and stride == 1 and padding <= k - 1:
            # full correlation of g with the flipped kernel: one GEMM, no scatter
            e = k - 1 - padding
            gp = np.pad(g, ((0, 0), (e, e), (0, 0))) if e else np.ascontiguousarray(g)
            t0, t1, t2 = gp.strides
            gc = as_strided(gp, (nb, length, k, cout), (t0, t1, t1, t2)).reshape(nb * length, k * cout)
            wf = weight.data[:, :, ::-1].transpose(2, 0, 1).reshape(k * cout, cin)
            gx = (gc @ wf).reshape(nb, length, cin)
        elif x.requires_grad:
            gcols = (gm @ wm).reshape(nb, lout, k, cin)
            gxp = np.zeros_like(xp)
            span = stride * (lout - 1) + 1
            for j in range(k):
                gxp[:, j : j + span : stride] += gcols[:, :, j]
            gx = gxp[:, padding : padding + length] if padding else gxp
        return gx, gw, gb

    return _node(out.reshape(nb, lout, cout), (x, weight, b), backward)


def _interp_plan(n_in: int, n_out: int):
    # sample-centre alignment: output i sits at input coordinate
    # (i + 0.5) * n_in / n_out - 0.5, clamped to the valid range
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def interp_linear(a: Tensor, n_out: int) -> Tensor:
    """Linear interpolation of the last axis to length ``n_out``."""
    n_in = a.shape[-1]
    lo, hi, frac = _interp_plan(n_in, n_out)
    out = a.data[..., lo] * (1.0 - frac) + a.data[..., hi] * frac

    def backward(g):
        flat = g.reshape(-1, n_out)
        gin = np.zeros((flat.shape[0], n_in))
        # per-row bincount keeps accumulation order fixed
        for r in range(flat.shape[0]):
            gin[r] = (np.bincount(lo, flat[r] * (1.0 - frac), minlength=n_in)
                      + np.bincount(hi, flat[r] * frac, minlength=n_in))
        return (gin.reshape(a.shape),)

    return _node(out, (a,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; leading axes are flattened
    so the product is a single GEMM."""
    x, weight = as_tensor(x), as_tensor(weight)
    din, dout = weight.shape
    if x.shape[-1] != din:
        raise ShapeError(f"linear expects last dim {din}, got {x.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, din)
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data
    b = bias if bias is not None else Tensor(0.0)

    def backward(g):
        g2 = g.reshape(-1, dout)
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    return _node(out.reshape(*lead, dout), (x, weight, b), backward)


# -- losses ---------------------------------------------------------------------
def bce(probs: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy on probabilities clamped to [1e-7, 1 - 1e-7]."""
    probs = as_tensor(probs)
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.float64)
    if y.shape != probs.shape:
        raise ShapeError(f"bce shape mismatch: {probs.shape} vs {y.shape}")
    p = np.clip(probs.data, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (probs.data >= PROB_CLAMP) & (probs.data <= 1.0 - PROB_CLAMP)
    elem = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    dp = (-y / p + (1.0 - y) / (1.0 - p)) * inside
    if reduction == "none":
        return _node(elem, (probs,), lambda g: (g * dp,))
    n = elem.size
    return _node(np.asarray(elem.mean()), (probs,), lambda g: (g * dp / n,))


def ce(logits: Tensor, target, reduction: str = "mean") -> Tensor:
    """Cross-entropy of integer class targets against logits on the last axis.

    A 1-D ``logits`` with a scalar ``target`` gives a scalar loss.
    """
    logits = as_tensor(logits)
    t = np.asarray(target, dtype=np.int64)
    lsm = log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        picked = lsm[int(t)]
        return -picked
    flat = reshape(lsm, (-1, logits.shape[-1]))
    rows = np.arange(flat.shape[0])
    picked = -(flat[rows, t.reshape(-1)])
    if reduction == "none":
        return reshape(picked, t.shape)
    return picked.mean()


def l1(a, b, reduction: str = "mean") -> Tensor:
    from .tensor import tabs

    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"l1 shape mismatch: {a.shape} vs {b.shape}")
    d = tabs(a - b)
    return d if reduction == "none" else d.mean()


# -- attention ------------------------------------------------------------------
def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, bias=None) -> tuple[Tensor, Tensor]:
    """softmax(q kᵀ / sqrt(d) + bias) v over the last two axes; returns (output, weights).

    ``bias`` is a constant array broadcastable to ``[Nq, Nk]``, shared by all
    leading (batch, head) positions.
    """
    weights = attention_weights(q, k, bias)
    return matmul(weights, v), weights


def attention_weights(q: Tensor, k: Tensor, bias=None) -> Tensor:
    """softmax(q kᵀ / sqrt(d) + bias) over the last axis as one node.

    Scores, scaling, bias and normalisation reuse a single buffer; the
    ``[..., Nq, Nk]`` arrays dominate attention memory traffic.
    """
    q, k = as_tensor(q), as_tensor(k)
    if q.ndim < 2 or k.ndim < 2 or q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention expects [..., N, d] inputs, got {q.shape} and {k.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    w = np.ascontiguousarray(q.data @ np.swapaxes(k.data, -1, -2))
    nk = w.shape[-1]
    if bias is not None:
        bias = np.broadcast_to(np.asarray(bias, dtype=np.float64), w.shape[-2:])
    _kernels.softmax_rows(w.reshape(-1, nk), scale, bias)

    def backward(g):
        gs = _kernels.softmax_rows_bwd(g.reshape(-1, nk), w.reshape(-1, nk), scale).reshape(w.shape)
        gq = _unbroadcast(gs @ k.data, q.shape) if q.requires_grad else None
        gk = _unbroadcast(np.swapaxes(gs, -1, -2) @ q.data, k.shape) if k.requires_grad else None
        return gq, gk

    return _node(w, (q, k), backward)


def transpose_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def split_heads(x: Tensor, heads: int) -> Tensor:
    nb, n, d = x.shape
    return transpose(reshape(x, (nb, n, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    nb, h, n, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (nb, n, h * dh))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
                         bq=None, bk=None, bv=None, bo=None, attn_bias=None):
    """Project, attend per head, concatenate and output-project.

    Inputs are ``[B, N, D]``; weights are ``[D, D]`` applied as ``x @ w``.
    Returns ``(output, attention_weights)`` with weights ``[B, H, Nq, Nk]``.
    ``attn_bias`` ([Nq, Nk], constant) is added to every head's logits.
    """
    d = q.shape[-1]
    if d % heads:
        raise ShapeError(f"heads={heads} does not divide model dim {d}")

    def proj(x, w, b):
        return linear(x, w, b)

    qh = split_heads(proj(q, wq, bq), heads)
    kh = split_heads(proj(k, wk, bk), heads)
    vh = split_heads(proj(v, wv, bv), heads)
    out, weights = scaled_dot_attention(qh, kh, vh, attn_bias)
    return proj(merge_heads(out), wo, bo), weights


__all__ = [
    "softmax", "log_softmax", "layer_norm", "conv1d", "conv_output_length",
    "interp_linear", "linear", "bce", "ce", "l1", "attention_weights", "scaled_dot_attention",
    "multi_head_attention",
    "concat",
]
