"""Temporal Peak Suppression: threshold, cluster by separation, keep argmax."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import DetectionSet, InvalidInputError, ProbabilitySequence


@dataclass(frozen=True)
class TpsConfig:
    """``delta`` is in samples; 44 corresponds to 0.33 s (180 bpm) at 133 Hz.

    ``anchored=True`` switches from gap chaining to clusters that close
    ``delta`` samples after their first candidate.
    """

    tau: float = 0.5
    delta: int = 44
    anchored: bool = False

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise InvalidInputError("tau must lie in (0, 1)")
        if self.delta < 1:
            raise InvalidInputError("delta must be >= 1")

    @classmethod
    def for_rate(cls, fs: float, tau: float = 0.5, min_rr: float = 0.33) -> TpsConfig:
        return cls(tau=tau, delta=max(1, int(round(min_rr * fs))))


def _probs(y) -> np.ndarray:
    if isinstance(y, ProbabilitySequence):
        return y.probs
    return np.asarray(y, dtype=np.float64).reshape(-1)


def threshold_candidates(y, tau: float) -> np.ndarray:
    return np.flatnonzero(_probs(y) >= tau).astype(np.int64)


def cluster_candidates(candidates, delta: int, anchored: bool = False) -> list[np.ndarray]:
    c = np.asarray(candidates, dtype=np.int64)
    starts = _kernels.cluster_starts(c, int(delta), bool(anchored))
    return np.split(c, starts[1:]) if c.size else []


def suppress(y, cfg: TpsConfig = TpsConfig()) -> DetectionSet:
    """One event per cluster at its maximum response (earliest index on ties)."""
    probs = _probs(y)
    cand = threshold_candidates(probs, cfg.tau)
    if cand.size == 0:
        return DetectionSet()
    starts = _kernels.cluster_starts(cand, int(cfg.delta), bool(cfg.anchored))
    times = np.empty(starts.size, dtype=np.int64)
    bounds = np.append(starts, cand.size)
    for m in range(starts.size):
        members = cand[bounds[m] : bounds[m + 1]]
        times[m] = members[np.argmax(probs[members])]  # argmax returns first maximum
    return DetectionSet(times, probs[times])
