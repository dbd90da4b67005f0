import numpy as np
import pytest

from bcgpeaks.core import InvalidInputError
from bcgpeaks.synthgen import (BeatTrain, SynthConfig, generate_dataset, generate_epoch,
                               generate_rr_train, render_epoch)

QUIET = dict(noise_std=0.0, resp_amplitude=0.0, artifact_rate=0.0)


def test_defaults():
    cfg = SynthConfig()
    assert (cfg.fs, cfg.epoch_seconds, cfg.n_samples) == (133.0, 30.0, 3990)
    assert cfg.rr_bounds == (0.33, 2.0)


@pytest.mark.parametrize("kw", [dict(noise_std=-1), dict(rr_bounds=(0, 2)),
                                dict(mean_rr=3.0), dict(mean_rr=0.2), dict(fs=0)])
def test_invalid_config(kw):
    with pytest.raises(InvalidInputError):
        SynthConfig(**kw)


def test_jitter_free_train():
    cfg = SynthConfig(rr_jitter=0.0, mean_rr=1.0, epoch_seconds=10.0)
    beats = generate_rr_train(cfg, np.random.default_rng(0), first_beat=0.5).beat_times
    assert np.allclose(beats, np.arange(10) + 0.5)
    assert beats.size == 10


def test_beat_count_bounds():
    beats = generate_rr_train(SynthConfig(), np.random.default_rng(42)).beat_times
    assert 15 <= beats.size <= 91
    rr = np.diff(beats)
    assert rr.min() >= 0.33 - 1e-12 and rr.max() <= 2.0 + 1e-12
    assert beats[0] >= 0 and beats[-1] < 30.0


def test_single_beat_template_peak():
    cfg = SynthConfig(**QUIET)
    x, ann = render_epoch(BeatTrain(np.array([1.0])), cfg, np.random.default_rng(0))
    assert int(np.argmax(x.samples)) == 133
    assert x.samples[133] == pytest.approx(1.0, abs=1e-12)
    assert ann.peaks.tolist() == [133]


def test_template_cross_talk():
    cfg = SynthConfig(**QUIET)
    x, _ = render_epoch(BeatTrain(np.array([1.0, 2.0])), cfg, np.random.default_rng(0))
    single, _ = render_epoch(BeatTrain(np.array([1.0])), cfg, np.random.default_rng(0))
    assert abs(x.samples[266] - 1.0) < 1e-6
    assert abs(x.samples[133] - single.samples[133]) < 1e-6


@pytest.mark.parametrize("seed", range(25))
def test_annotation_matches_beats(seed):
    cfg = SynthConfig(epoch_seconds=10.0)
    rng = np.random.default_rng(seed)
    beats = generate_rr_train(cfg, rng)
    _, ann = render_epoch(beats, cfg, rng)
    assert len(ann) == beats.beat_times.size
    assert np.array_equal(ann.peaks, np.rint(beats.beat_times * cfg.fs).astype(int))
    min_sep = np.floor(cfg.rr_bounds[0] * cfg.fs)
    assert np.all(np.diff(ann.peaks) >= min_sep)


def test_quiet_local_maxima_coincide():
    cfg = SynthConfig(**QUIET)
    x, ann = generate_epoch(cfg, seed=5)
    w = int(cfg.j_width * cfg.fs)
    s = np.abs(x.samples)
    for p in ann.peaks:
        lo, hi = max(0, p - w), min(s.size, p + w + 1)
        assert lo + int(np.argmax(s[lo:hi])) == p


def test_dataset_determinism_and_seeds():
    cfg = SynthConfig(epoch_seconds=5.0)
    a = generate_dataset(cfg, 3, base_seed=11)
    b = generate_dataset(cfg, 3, base_seed=11)
    for (ea, aa), (eb, ab), i in zip(a, b, range(3)):
        assert np.array_equal(ea.samples, eb.samples) and np.array_equal(aa.peaks, ab.peaks)
        assert ea.epoch_index == i
        single, _ = generate_epoch(cfg, 11 + i)
        assert np.array_equal(single.samples, ea.samples)


def test_full_length_epochs():
    data = generate_dataset(SynthConfig(), 20)
    assert all(e.n_samples == 3990 for e, _ in data)


def test_total_peaks_in_bounds():
    data = generate_dataset(SynthConfig(epoch_seconds=10.0), 600, base_seed=7)
    total = sum(len(a) for _, a in data)
    assert 600 * 10 / 2.0 <= total <= 600 * 10 / 0.33


def test_n_epochs_validation():
    with pytest.raises(InvalidInputError):
        generate_dataset(SynthConfig(), 0)
