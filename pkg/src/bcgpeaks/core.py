"""Shared domain types and small conversions used across the package."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


@dataclass(frozen=True)
class SignalEpoch:
    """One fixed-rate window of a single-channel signal."""

    samples: np.ndarray
    fs: float
    subject_id: str = "sub-00"
    epoch_index: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise InvalidInputError("samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("samples contain NaN or Inf")
        if not self.fs > 0:
            raise InvalidInputError(f"fs must be positive, got {self.fs}")
        if self.epoch_index < 0:
            raise InvalidInputError("epoch_index must be non-negative")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)

    def with_samples(self, samples: np.ndarray) -> SignalEpoch:
        return SignalEpoch(samples, self.fs, self.subject_id, self.epoch_index)


@dataclass(frozen=True)
class PeakAnnotation:
    """Sorted ground-truth peak indices for one epoch.

    ``n_samples`` is optional; when given, every index is bounds-checked.
    """

    peaks: np.ndarray
    n_samples: int | None = None

    def __post_init__(self):
        peaks = np.asarray(self.peaks, dtype=np.int64).reshape(-1)
        if peaks.size > 1 and np.any(np.diff(peaks) <= 0):
            raise InvalidInputError("peaks must be strictly increasing")
        if peaks.size and peaks[0] < 0:
            raise InvalidInputError(f"peak index {peaks[0]} is negative")
        if self.n_samples is not None and peaks.size and peaks[-1] >= self.n_samples:
            raise InvalidInputError(
                f"peak index {peaks[-1]} outside epoch of length {self.n_samples}"
            )
        peaks.setflags(write=False)
        object.__setattr__(self, "peaks", peaks)

    def __len__(self) -> int:
        return int(self.peaks.size)


@dataclass(frozen=True)
class ProbabilitySequence:
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if np.any(~np.isfinite(probs)) or np.any(probs < 0) or np.any(probs > 1):
            raise InvalidInputError("probabilities must lie in [0, 1]")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return int(self.probs.size)


@dataclass(frozen=True)
class DenseLabels:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.size and not np.all((labels == 0) | (labels == 1)):
            raise InvalidInputError("labels must be binary")
        labels = labels.astype(np.float64).reshape(-1)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.size)


@dataclass(frozen=True)
class DetectionSet:
    """Predicted peak events as parallel ``times`` / ``scores`` arrays.

    No ordering is implied; use :meth:`sorted` when order matters.
    """

    times: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64).reshape(-1)
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if times.shape != scores.shape:
            raise InvalidInputError("times and scores must have the same length")
        if np.any(times < 0):
            raise InvalidInputError("event times must be non-negative")
        if np.any(scores < 0) or np.any(scores > 1):
            raise InvalidInputError("event scores must lie in [0, 1]")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def events(self) -> list[tuple[int, float]]:
        return [(int(t), float(s)) for t, s in zip(self.times, self.scores)]

    def sorted(self) -> DetectionSet:
        order = np.argsort(self.times, kind="stable")
        return DetectionSet(self.times[order], self.scores[order])


def normalize_epoch(epoch: SignalEpoch) -> SignalEpoch:
    """Z-score an epoch with the population standard deviation.

    Near-constant epochs (std < 1e-8) map to all zeros.
    """
    x = epoch.samples
    if x.size < 2:
        raise InvalidInputError("normalization needs at least 2 samples")
    centered = x - x.mean()
    std = np.sqrt(np.mean(centered * centered))
    if std < 1e-8:
        return epoch.with_samples(np.zeros_like(x))
    return epoch.with_samples(centered / std)


def rasterize_labels(ann: PeakAnnotation, n_samples: int, halfwidth: int = 2) -> DenseLabels:
    """Binary pulse train: ones within ``halfwidth`` samples of each peak."""
    if halfwidth < 0:
        raise InvalidInputError("halfwidth must be >= 0")
    peaks = ann.peaks
    if peaks.size and (peaks[0] < 0 or peaks[-1] >= n_samples):
        raise InvalidInputError("peak index outside [0, T)")
    labels = np.zeros(n_samples, dtype=np.float64)
    for p in peaks:
        labels[max(0, p - halfwidth) : min(n_samples, p + halfwidth + 1)] = 1.0
    return DenseLabels(labels)


def to_normalized_time(t, n_samples: int):
    if n_samples < 2:
        raise InvalidInputError("normalized time needs T >= 2")
    return np.asarray(t, dtype=np.float64) / (n_samples - 1)


def from_normalized_time(u, n_samples: int):
    """Map normalized location(s) in [0, 1] back to sample indices."""
    if n_samples < 2:
        raise InvalidInputError("normalized time needs T >= 2")
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any(u_arr < 0) or np.any(u_arr > 1) or np.any(~np.isfinite(u_arr)):
        raise InvalidInputError("normalized time must lie in [0, 1]")
    idx = np.rint(u_arr * (n_samples - 1)).astype(np.int64)
    return int(idx) if idx.ndim == 0 else idx
