"""Detection, localization, RR-interval and cardinality metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DetectionSet, InvalidInputError, PeakAnnotation
from .matching import tolerance_match


@dataclass(frozen=True)
class EpochMetrics:
    tp: int
    fp: int
    fn: int
    mae_samples: float | None
    rr_err_samples: float | None
    card_err: int
    fs: float
    subject_id: str = ""
    epoch_index: int = 0

    @property
    def mae_ms(self) -> float | None:
        return None if self.mae_samples is None else self.mae_samples * 1000.0 / self.fs

    @property
    def rr_err_ms(self) -> float | None:
        return None if self.rr_err_samples is None else self.rr_err_samples * 1000.0 / self.fs

    @property
    def f1(self) -> float:
        return prf1(self.tp, self.fp, self.fn)[2]


def prf1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, F1; every 0/0 is taken as 0."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def _mae_samples(tp_pairs) -> float | None:
    if not tp_pairs:
        return None
    d = np.array([abs(p - g) for p, g in tp_pairs], dtype=np.float64)
    return float(d.mean())


def mae(tp_pairs, fs: float) -> float | None:
    """Mean |pred - ref| over matched pairs, in milliseconds; None without pairs."""
    m = _mae_samples(tp_pairs)
    return None if m is None else m * 1000.0 / fs


def _rr_err_samples(tp_pairs, gt) -> float | None:
    peaks = np.asarray(gt.peaks if isinstance(gt, PeakAnnotation) else gt, dtype=np.int64)
    partner = {g: p for p, g in tp_pairs}
    errs = []
    for a, b in zip(peaks[:-1], peaks[1:]):
        a, b = int(a), int(b)
        if a in partner and b in partner:
            errs.append(abs((partner[b] - partner[a]) - (b - a)))
    return float(np.mean(errs)) if errs else None


def rr_err(tp_pairs, gt, fs: float) -> float | None:
    """Mean RR-interval error (ms) over consecutive reference beats that are
    both matched; None when no such pair exists."""
    e = _rr_err_samples(tp_pairs, gt)
    return None if e is None else e * 1000.0 / fs


def card_err(pred, gt) -> int:
    n_pred = len(pred.times) if isinstance(pred, DetectionSet) else len(pred)
    n_gt = len(gt.peaks) if isinstance(gt, PeakAnnotation) else len(gt)
    return abs(n_pred - n_gt)


def epoch_metrics(pred: DetectionSet, gt: PeakAnnotation, delta_eval: int, fs: float,
                  subject_id: str = "", epoch_index: int = 0) -> EpochMetrics:
    m = tolerance_match(pred, gt, delta_eval)
    return EpochMetrics(
        tp=len(m.tp_pairs), fp=len(m.fp), fn=len(m.fn),
        mae_samples=_mae_samples(m.tp_pairs),
        rr_err_samples=_rr_err_samples(m.tp_pairs, gt),
        card_err=card_err(pred, gt), fs=fs,
        subject_id=subject_id, epoch_index=epoch_index,
    )


@dataclass
class SummaryRow:
    name: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    mae_samples: float | None
    mae_ms: float | None
    rr_err_samples: float | None
    rr_err_ms: float | None
    card_err: float
    n_epochs: int


def _mean_or_none(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def summarize(name: str, epochs: list[EpochMetrics]) -> SummaryRow:
    """Micro-averaged P/R/F1; MAE and RRerr averaged over epochs that have
    them; CardErr averaged over all epochs."""
    tp = sum(e.tp for e in epochs)
    fp = sum(e.fp for e in epochs)
    fn = sum(e.fn for e in epochs)
    p, r, f1 = prf1(tp, fp, fn)
    return SummaryRow(
        name=name, tp=tp, fp=fp, fn=fn, precision=p, recall=r, f1=f1,
        mae_samples=_mean_or_none(e.mae_samples for e in epochs),
        mae_ms=_mean_or_none(e.mae_ms for e in epochs),
        rr_err_samples=_mean_or_none(e.rr_err_samples for e in epochs),
        rr_err_ms=_mean_or_none(e.rr_err_ms for e in epochs),
        card_err=float(np.mean([e.card_err for e in epochs])) if epochs else 0.0,
        n_epochs=len(epochs),
    )


@dataclass
class DatasetReport:
    pooled: SummaryRow
    subjects: dict[str, SummaryRow] = field(default_factory=dict)
    epochs: list[EpochMetrics] = field(default_factory=list)


def evaluate(predictions, annotations, delta_eval: int = 10, fs: float | None = None,
             subject_ids=None, epoch_indices=None, fs_per_epoch=None) -> DatasetReport:
    """Score per-epoch detections against annotations.

    ``fs`` applies to every epoch unless ``fs_per_epoch`` is given.
    """
    predictions = list(predictions)
    annotations = list(annotations)
    if len(predictions) != len(annotations):
        raise InvalidInputError(
            f"{len(predictions)} prediction sets for {len(annotations)} annotated epochs"
        )
    n = len(predictions)
    if fs_per_epoch is None:
        if fs is None:
            raise InvalidInputError("fs is required")
        fs_per_epoch = [fs] * n
    subject_ids = list(subject_ids) if subject_ids is not None else [""] * n
    epoch_indices = list(epoch_indices) if epoch_indices is not None else list(range(n))
    per_epoch = [
        epoch_metrics(p, a, delta_eval, f, s, i)
        for p, a, f, s, i in zip(predictions, annotations, fs_per_epoch, subject_ids, epoch_indices)
    ]
    subjects = {}
    for sid in sorted(set(subject_ids)):
        subjects[sid] = summarize(sid, [e for e in per_epoch if e.subject_id == sid])
    return DatasetReport(summarize("pooled", per_epoch), subjects, per_epoch)
