"""Bipartite assignment: training-time set matching and evaluation matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import DetectionSet, InvalidInputError, PeakAnnotation, to_normalized_time


@dataclass(frozen=True)
class Assignment:
    """One-to-one (row, col) pairs sorted by row, with their summed cost."""

    rows: np.ndarray
    cols: np.ndarray
    cost: float = 0.0

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(int(r), int(c)) for r, c in zip(self.rows, self.cols)]

    def __len__(self) -> int:
        return int(self.rows.size)


def hungarian(costs) -> Assignment:
    """Minimum-cost assignment covering the smaller side of ``costs``.

    Among several optimal assignments, the lexicographically smallest
    row-sorted pair list is returned.
    """
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim != 2:
        raise InvalidInputError("cost matrix must be 2-D")
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("cost matrix entries must be finite")
    n_rows, n_cols = c.shape
    if n_rows == 0 or n_cols == 0:
        empty = np.zeros(0, dtype=np.int64)
        return Assignment(empty, empty, 0.0)
    rows_are_small = n_rows <= n_cols
    small = c if rows_are_small else c.T
    small = np.ascontiguousarray(small)
    _, u, v = _kernels.lap_solve(small)
    scale = 1.0 + float(np.max(np.abs(small)))
    tol = 1e-9 * scale
    tight = (small - u[:, None] - v[None, :]) <= tol
    required = v < -tol
    partner = _kernels.lex_assign(tight, required, rows_are_small)
    small_idx = np.arange(small.shape[0])
    if rows_are_small:
        rows, cols = small_idx, partner
    else:
        order = np.argsort(partner, kind="stable")
        rows, cols = partner[order], small_idx[order]
    rows = rows.astype(np.int64)
    cols = cols.astype(np.int64)
    total = float(c[rows, cols].sum()) if rows.size else 0.0
    return Assignment(rows, cols, total)


def match_cost(p_peak, t_hat, t_gt, lambda_cls: float = 1.0, lambda_pt: float = 5.0,
               log_prob: bool = False):
    """Matching cost between query prediction(s) and ground-truth location(s).

    The class term is the negative peak probability (``-log p`` with
    ``log_prob``). Broadcasts like numpy.
    """
    p = np.asarray(p_peak, dtype=np.float64)
    cls_term = -np.log(np.clip(p, 1e-12, 1.0)) if log_prob else -p
    return lambda_cls * cls_term + lambda_pt * np.abs(np.asarray(t_hat) - np.asarray(t_gt))


def match_sets(class_logits, locations, gt: PeakAnnotation, n_samples: int,
               lambda_cls: float = 1.0, lambda_pt: float = 5.0,
               log_prob: bool = False) -> Assignment:
    """Assign ground-truth peaks (cols) to queries (rows) for one epoch."""
    from .models import peak_probability

    logits = np.asarray(class_logits, dtype=np.float64)
    loc = np.asarray(locations, dtype=np.float64)
    k = loc.shape[0]
    peaks = np.asarray(gt.peaks if isinstance(gt, PeakAnnotation) else gt, dtype=np.int64)
    if peaks.size > k:
        raise InvalidInputError(
            f"{peaks.size} ground-truth peaks exceed num_queries={k}; raise num_queries"
        )
    if peaks.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return Assignment(empty, empty, 0.0)
    tgt = to_normalized_time(peaks, n_samples)
    p = peak_probability(logits)
    cost = match_cost(p[:, None], loc[:, None], tgt[None, :], lambda_cls, lambda_pt, log_prob)
    return hungarian(cost)


@dataclass(frozen=True)
class ToleranceMatch:
    tp_pairs: list[tuple[int, int]]  # (predicted time, reference time)
    fp: list[int]
    fn: list[int]


def tolerance_match(pred, gt, delta_eval: int = 10) -> ToleranceMatch:
    """Optimal one-to-one matching within ``delta_eval`` samples.

    Maximizes the number of matched pairs, then minimizes their summed
    absolute offset.
    """
    if delta_eval < 0:
        raise InvalidInputError("delta_eval must be >= 0")
    p_times = np.asarray(pred.times if isinstance(pred, DetectionSet) else pred, dtype=np.int64)
    g_times = np.asarray(gt.peaks if isinstance(gt, PeakAnnotation) else gt, dtype=np.int64)
    p_times = np.sort(p_times, kind="stable")
    if p_times.size == 0 or g_times.size == 0:
        return ToleranceMatch([], [int(t) for t in p_times], [int(t) for t in g_times])
    dist = np.abs(p_times[:, None] - g_times[None, :]).astype(np.float64)
    allowed = dist <= delta_eval
    # a forbidden edge costs more than any set of allowed ones, so the
    # optimum first maximizes the number of allowed pairs
    big = float((delta_eval + 1) * (min(dist.shape) + 1))
    cost = np.where(allowed, dist, big)
    asg = hungarian(cost)
    keep = allowed[asg.rows, asg.cols]
    rows, cols = asg.rows[keep], asg.cols[keep]
    tp = [(int(p_times[r]), int(g_times[c])) for r, c in zip(rows, cols)]
    matched_p = np.zeros(p_times.size, dtype=bool)
    matched_p[rows] = True
    matched_g = np.zeros(g_times.size, dtype=bool)
    matched_g[cols] = True
    return ToleranceMatch(
        tp,
        [int(t) for t in p_times[~matched_p]],
        [int(t) for t in g_times[~matched_g]],
    )
