"""Losses for both detectors and the mini-batch Adam training loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._malloc import retain_freed_memory
from .core import (DenseLabels, InvalidInputError, PeakAnnotation, ProbabilitySequence,
                   SignalEpoch, normalize_epoch, rasterize_labels, to_normalized_time)
from .diffcompute import functional as F
from .diffcompute.nn import Module
from .diffcompute.optim import Adam
from .diffcompute.tensor import Tensor, as_tensor, no_grad
from .matching import Assignment, match_sets

VALIDATE_EVERY = 10
CLIP_NORM = 10.0


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    model: str = "detr"
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 200
    lambda_cls: float = 1.0
    lambda_pt: float = 5.0
    lambda_aux: float = 1.0
    noobj_weight: float = 0.1
    seed: int = 0
    label_halfwidth: int = 2
    clip_grad: bool = False
    log_prob_cost: bool = False

    def __post_init__(self):
        if self.model not in ("unet", "detr"):
            raise ConfigError(f"unknown model kind {self.model!r}")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        for name in ("lambda_cls", "lambda_pt", "lambda_aux", "noobj_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.label_halfwidth < 0:
            raise ConfigError("label_halfwidth must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    loss_main: float  # seg BCE (unet) or detection loss (detr)
    loss_aux: float | None = None
    val_f1: float | None = None
    val_mae_ms: float | None = None


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_rows(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    @classmethod
    def from_rows(cls, rows) -> TrainHistory:
        return cls([EpochRecord(**r) for r in rows])


HISTORY_COLUMNS = ("epoch", "loss", "loss_main", "loss_aux", "val_f1", "val_mae_ms")


# -- losses -----------------------------------------------------------------------------
def _seq(a):
    if isinstance(a, (ProbabilitySequence,)):
        return a.probs
    if isinstance(a, DenseLabels):
        return a.labels
    return a


def seg_loss(y_hat, y) -> Tensor:
    """Mean point-wise binary cross-entropy."""
    y_hat = as_tensor(_seq(y_hat))
    y = np.asarray(_seq(y), dtype=np.float64)
    if y_hat.shape != y.shape:
        raise InvalidInputError(f"length mismatch: {y_hat.shape} vs {y.shape}")
    return F.bce(y_hat, y)


aux_loss = seg_loss


def detection_targets(assignments: list[Assignment], gts: list[np.ndarray], n_queries: int,
                      n_samples: int, noobj_weight: float):
    """Dense per-query targets for a batch of assignments.

    Returns ``(cls_target, cls_weight, loc_target, loc_mask, norm)``; each
    array is ``[B, K]`` and ``norm`` is ``max(1, N_b)`` per sample.
    """
    b = len(assignments)
    cls_t = np.zeros((b, n_queries), dtype=np.int64)
    cls_w = np.full((b, n_queries), float(noobj_weight))
    loc_t = np.zeros((b, n_queries))
    loc_m = np.zeros((b, n_queries))
    norm = np.ones(b)
    for i, (asg, peaks) in enumerate(zip(assignments, gts)):
        norm[i] = max(1, len(peaks))
        if len(asg) == 0:
            continue
        q, g = asg.rows, asg.cols
        cls_t[i, q] = 1
        cls_w[i, q] = 1.0
        loc_t[i, q] = to_normalized_time(np.asarray(peaks)[g], n_samples)
        loc_m[i, q] = 1.0
    return cls_t, cls_w, loc_t, loc_m, norm


def detection_loss_batch(logits: Tensor, loc: Tensor, gts, n_samples: int, cfg: TrainConfig,
                         assignments=None) -> Tensor:
    """Batch mean of per-sample detection losses.

    ``logits`` [B, K, 2], ``loc`` [B, K]. Matching is recomputed from the
    current outputs unless ``assignments`` are given.
    """
    b, k = loc.shape
    peaks = [np.asarray(g.peaks if isinstance(g, PeakAnnotation) else g, dtype=np.int64)
             for g in gts]
    if assignments is None:
        assignments = [
            match_sets(logits.data[i], loc.data[i], peaks[i], n_samples,
                       cfg.lambda_cls, cfg.lambda_pt, cfg.log_prob_cost)
            for i in range(b)
        ]
    cls_t, cls_w, loc_t, loc_m, norm = detection_targets(assignments, peaks, k, n_samples,
                                                         cfg.noobj_weight)
    scale = 1.0 / (norm[:, None] * b)
    ce = F.ce(logits, cls_t, reduction="none")  # [B, K]
    l1 = F.l1(loc, loc_t, reduction="none")
    return (ce * (cls_w * scale)).sum() + (l1 * (cfg.lambda_pt * loc_m * scale)).sum()


def detection_loss(out, gt: PeakAnnotation, assignment: Assignment, cfg: TrainConfig,
                   n_samples: int) -> Tensor:
    """Single-epoch detection loss.

    ``out`` holds ``class_logits`` [K, 2] and ``locations`` [K] (Tensors or
    arrays), as a dict with keys ``logits``/``loc`` or a QueryOutputs.
    """
    logits, loc = _query_tensors(out)
    return detection_loss_batch(logits[None], loc[None], [gt], n_samples, cfg, [assignment])


def _query_tensors(out):
    if isinstance(out, dict):
        return as_tensor(out["logits"]), as_tensor(out["loc"])
    return as_tensor(out.class_logits), as_tensor(out.locations)


def total_loss(out: dict, gts, labels, cfg: TrainConfig, n_samples: int, assignments=None):
    """Detection loss plus ``lambda_aux`` times the auxiliary BCE for a batch.

    Returns ``(loss, det, aux)`` with ``aux`` None when ``lambda_aux == 0``.
    """
    det = detection_loss_batch(out["logits"], out["loc"], gts, n_samples, cfg, assignments)
    if cfg.lambda_aux == 0:
        return det, det, None
    if out.get("aux") is None:
        raise ConfigError("lambda_aux > 0 requires the auxiliary head")
    aux = aux_loss(out["aux"], labels)
    return det + aux * cfg.lambda_aux, det, aux


# -- data preparation ----------------------------------------------------------------
@dataclass
class Batchable:
    """Normalized inputs, dense labels and peak lists for a set of epochs."""

    x: np.ndarray  # [N, T]
    labels: np.ndarray  # [N, T]
    peaks: list[np.ndarray]
    fs: float
    subject_ids: list[str]
    epoch_indices: list[int]

    @property
    def n_samples(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.x.shape[0]


def prepare(data: list[tuple[SignalEpoch, PeakAnnotation]], halfwidth: int = 2) -> Batchable:
    if not data:
        raise InvalidInputError("no epochs")
    n = data[0][0].n_samples
    fs = data[0][0].fs
    for e, _ in data:
        if e.n_samples != n or e.fs != fs:
            raise InvalidInputError("epochs must share length and fs")
    x = np.stack([normalize_epoch(e).samples for e, _ in data])
    labels = np.stack([rasterize_labels(a, n, halfwidth).labels for _, a in data])
    return Batchable(x, labels, [a.peaks.copy() for _, a in data], fs,
                     [e.subject_id for e, _ in data], [e.epoch_index for e, _ in data])


# -- training ------------------------------------------------------------------------
def batch_loss(model: Module, x: np.ndarray, labels: np.ndarray, peaks, cfg: TrainConfig):
    """Forward pass and loss for one batch; returns ``(loss, main, aux)``."""
    if model.kind == "unet":
        loss = seg_loss(model(x), labels)
        return loss, loss, None
    with_aux = cfg.lambda_aux > 0
    if with_aux and model.aux is None:
        raise ConfigError("lambda_aux > 0 requires the auxiliary head")
    out = model.forward(x, with_aux=with_aux)
    return total_loss(out, peaks, labels, cfg, x.shape[1])


def predict(model: Module, x: np.ndarray, tps_cfg=None, score_threshold: float = 0.5,
            batch_size: int = 32):
    """Detection sets for every row of ``x`` (already normalized)."""
    from .models import detr_decode
    from .tps import TpsConfig, suppress

    out = []
    with no_grad():
        for s in range(0, x.shape[0], batch_size):
            xb = x[s : s + batch_size]
            if model.kind == "unet":
                probs = model(xb).data
                cfg = tps_cfg or TpsConfig()
                out.extend(suppress(p, cfg) for p in probs)
            else:
                res = model.forward(xb, with_aux=False)
                logits, loc = res["logits"].data, res["loc"].data
                out.extend(detr_decode(logits[i], loc[i], x.shape[1], score_threshold)
                           for i in range(xb.shape[0]))
    return out


def validate(model: Module, data: Batchable, delta_eval: int = 10, tps_cfg=None,
             score_threshold: float = 0.5):
    from .metrics import evaluate

    preds = predict(model, data.x, tps_cfg, score_threshold)
    anns = [PeakAnnotation(p, data.n_samples) for p in data.peaks]
    return evaluate(preds, anns, delta_eval, data.fs, data.subject_ids, data.epoch_indices)


def train_model(model: Module, train: Batchable, cfg: TrainConfig, val: Batchable | None = None,
                progress=None):
    """Fixed-schedule Adam training; returns ``(model, TrainHistory)``.

    The last partial batch of each epoch is kept. ``progress(record)`` is
    called after every epoch when given.
    """
    if len(train) == 0:
        raise InvalidInputError("empty training set")
    if model.kind != cfg.model:
        raise ConfigError(f"model kind {model.kind!r} does not match config {cfg.model!r}")
    retain_freed_memory()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr, clip_norm=CLIP_NORM if cfg.clip_grad else None)
    history = TrainHistory()
    n = len(train)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        tot = main = aux = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            opt.zero_grad()
            loss, l_main, l_aux = batch_loss(
                model, train.x[idx], train.labels[idx], [train.peaks[i] for i in idx], cfg)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(epoch, f"non-finite training loss {value}")
            loss.backward()
            opt.step()
            w = len(idx) / n
            tot += w * value
            main += w * float(l_main.data)
            if l_aux is not None:
                aux += w * float(l_aux.data)
        rec = EpochRecord(epoch, tot, main, aux if (model.kind == "detr" and cfg.lambda_aux > 0) else None)
        if val is not None and len(val) and epoch % VALIDATE_EVERY == 0:
            report = validate(model, val)
            rec.val_f1 = report.pooled.f1
            rec.val_mae_ms = report.pooled.mae_ms
        history.records.append(rec)
        if progress is not None:
            progress(rec)
    return model, history
