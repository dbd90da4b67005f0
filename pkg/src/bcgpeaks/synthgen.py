"""Seeded synthetic BCG-like epochs with exact J-peak ground truth.

Each beat is a Gaussian-windowed cosine centred on the beat time, so the
annotated sample is the template's carrier maximum. Respiration, white
noise and short coloured-noise bursts are added on top without touching
the labels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import InvalidInputError, PeakAnnotation, SignalEpoch

ARTIFACT_SECONDS = 0.5
ARTIFACT_GAIN = 5.0


@dataclass(frozen=True)
class SynthConfig:
    fs: float = 133.0
    epoch_seconds: float = 30.0
    mean_rr: float = 0.9
    rr_jitter: float = 0.03
    rr_bounds: tuple[float, float] = (0.33, 2.0)
    j_amplitude: float = 1.0
    j_width: float = 0.04
    j_freq: float = 9.0
    resp_amplitude: float = 0.4
    resp_freq: float = 0.25
    noise_std: float = 0.1
    artifact_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rr_bounds", tuple(float(b) for b in self.rr_bounds))
        lo, hi = self.rr_bounds
        nonneg = ("fs", "epoch_seconds", "mean_rr", "rr_jitter", "j_amplitude", "j_width",
                  "j_freq", "resp_amplitude", "resp_freq", "noise_std", "artifact_rate")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be >= 0")
        if self.fs <= 0 or self.epoch_seconds <= 0:
            raise InvalidInputError("fs and epoch_seconds must be positive")
        if not 0 < lo <= self.mean_rr <= hi:
            raise InvalidInputError("need 0 < rr_bounds.min <= mean_rr <= rr_bounds.max")

    @property
    def n_samples(self) -> int:
        return int(round(self.epoch_seconds * self.fs))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rr_bounds"] = list(self.rr_bounds)
        return d


@dataclass(frozen=True)
class BeatTrain:
    beat_times: np.ndarray  # seconds


def generate_rr_train(cfg: SynthConfig, rng: np.random.Generator,
                      first_beat: float | None = None) -> BeatTrain:
    """Bounded Gaussian random walk of RR intervals.

    The first beat falls uniformly in [0, mean_rr) unless ``first_beat``
    pins it.
    """
    lo, hi = cfg.rr_bounds
    t = rng.uniform(0.0, cfg.mean_rr) if first_beat is None else float(first_beat)
    rr = cfg.mean_rr
    beats = []
    n = cfg.n_samples
    # a beat whose sample index would round to T is past the epoch end
    while t < cfg.epoch_seconds and np.rint(t * cfg.fs) < n:
        beats.append(t)
        rr = min(max(rr + rng.normal(0.0, cfg.rr_jitter), lo), hi)
        t += rr
    return BeatTrain(np.asarray(beats, dtype=np.float64))


def _beat_templates(beats: np.ndarray, cfg: SynthConfig, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    if cfg.j_width == 0:
        return out
    reach = 12.0 * cfg.j_width  # envelope below 1e-31 beyond this
    for tb in beats:
        lo = np.searchsorted(t, tb - reach)
        hi = np.searchsorted(t, tb + reach, side="right")
        d = t[lo:hi] - tb
        out[lo:hi] += (cfg.j_amplitude * np.exp(-(d * d) / (2.0 * cfg.j_width**2))
                       * np.cos(2.0 * np.pi * cfg.j_freq * d))
    return out


def _artifact_bursts(cfg: SynthConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    out = np.zeros(n)
    count = rng.poisson(cfg.artifact_rate)
    width = max(1, int(round(ARTIFACT_SECONDS * cfg.fs)))
    for _ in range(count):
        start = int(rng.integers(0, max(1, n - width + 1)))
        # brown-ish noise: integrated white noise, re-centred, Hann-tapered
        walk = np.cumsum(rng.normal(0.0, 1.0, width))
        walk -= walk.mean()
        scale = np.max(np.abs(walk)) or 1.0
        burst = ARTIFACT_GAIN * cfg.j_amplitude * walk / scale * np.hanning(width)
        stop = min(n, start + width)
        out[start:stop] += burst[: stop - start]
    return out


def render_epoch(beats: BeatTrain, cfg: SynthConfig, rng: np.random.Generator,
                 subject_id: str = "synth", epoch_index: int = 0
                 ) -> tuple[SignalEpoch, PeakAnnotation]:
    n = cfg.n_samples
    t = np.arange(n) / cfg.fs
    x = _beat_templates(beats.beat_times, cfg, t)
    if cfg.resp_amplitude:
        x += cfg.resp_amplitude * np.sin(2.0 * np.pi * cfg.resp_freq * t)
    if cfg.noise_std:
        x += rng.normal(0.0, cfg.noise_std, n)
    x += _artifact_bursts(cfg, rng, n)
    idx = np.rint(beats.beat_times * cfg.fs).astype(np.int64)
    if idx.size and (idx[-1] >= n or np.any(np.diff(idx) <= 0)):
        raise InvalidInputError("beat times fall outside the epoch or collide after rounding")
    return (SignalEpoch(x, cfg.fs, subject_id, epoch_index), PeakAnnotation(idx, n))


def generate_epoch(cfg: SynthConfig, seed: int, subject_id: str = "synth", epoch_index: int = 0):
    rng = np.random.default_rng(seed)
    beats = generate_rr_train(cfg, rng)
    return render_epoch(beats, cfg, rng, subject_id, epoch_index)


def generate_dataset(cfg: SynthConfig, n_epochs: int, base_seed: int | None = None,
                     subject_id: str = "synth") -> list[tuple[SignalEpoch, PeakAnnotation]]:
    """Epoch ``i`` is generated from seed ``base_seed + i``."""
    if n_epochs < 1:
        raise InvalidInputError("n_epochs must be >= 1")
    base = cfg.seed if base_seed is None else base_seed
    return [generate_epoch(cfg, base + i, subject_id, i) for i in range(n_epochs)]
