import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bcgpeaks.core import (DetectionSet, InvalidInputError, PeakAnnotation, ProbabilitySequence,
                           SignalEpoch, from_normalized_time, normalize_epoch, rasterize_labels,
                           to_normalized_time)


def epoch(x, fs=133.0):
    return SignalEpoch(np.asarray(x, dtype=float), fs)


class TestTypes:
    def test_signal_rejects_nan(self):
        with pytest.raises(InvalidInputError):
            epoch([0.0, np.nan])

    def test_signal_rejects_bad_fs(self):
        with pytest.raises(InvalidInputError):
            epoch([0.0, 1.0], fs=0.0)

    def test_peaks_strictly_increasing(self):
        with pytest.raises(InvalidInputError):
            PeakAnnotation([3, 3])
        with pytest.raises(InvalidInputError):
            PeakAnnotation([5, 2])

    def test_peaks_in_bounds(self):
        with pytest.raises(InvalidInputError):
            PeakAnnotation([0, 10], n_samples=10)
        with pytest.raises(InvalidInputError):
            PeakAnnotation([-1])

    def test_probabilities_in_unit_interval(self):
        with pytest.raises(InvalidInputError):
            ProbabilitySequence([0.2, 1.1])

    def test_detection_scores(self):
        with pytest.raises(InvalidInputError):
            DetectionSet([1, 2], [0.5, 1.5])
        d = DetectionSet([9, 4], [0.6, 0.7])
        assert d.sorted().times.tolist() == [4, 9]

    def test_arrays_are_read_only(self):
        e = epoch([1.0, 2.0])
        with pytest.raises(ValueError):
            e.samples[0] = 5.0


class TestNormalize:
    def test_two_point(self):
        assert normalize_epoch(epoch([1, 3])).samples.tolist() == [-1.0, 1.0]

    def test_constant_maps_to_zeros(self):
        assert normalize_epoch(epoch([5, 5, 5, 5])).samples.tolist() == [0.0] * 4

    def test_ramp_moments(self):
        z = normalize_epoch(epoch([0, 1, 2, 3])).samples
        assert abs(z.mean()) < 1e-12
        assert abs(z.std() - 1.0) < 1e-12  # numpy std is the population convention

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            normalize_epoch(epoch([1.0]))

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_idempotent(self, xs):
        x = np.asarray(xs)
        if x.std() < 1e-6:
            return
        once = normalize_epoch(epoch(x)).samples
        twice = normalize_epoch(epoch(once)).samples
        assert np.max(np.abs(once - twice)) <= 1e-10


class TestRasterize:
    def test_zero_width(self):
        lab = rasterize_labels(PeakAnnotation([5]), 11, 0).labels
        assert lab.tolist() == [0] * 5 + [1] + [0] * 5

    def test_halfwidth_two(self):
        lab = rasterize_labels(PeakAnnotation([5]), 11, 2).labels
        assert np.flatnonzero(lab).tolist() == [3, 4, 5, 6, 7]

    def test_left_clip(self):
        lab = rasterize_labels(PeakAnnotation([0]), 4, 2).labels
        assert lab.tolist() == [1, 1, 1, 0]

    def test_out_of_range(self):
        with pytest.raises(InvalidInputError):
            rasterize_labels(PeakAnnotation([12]), 11, 2)

    @given(st.lists(st.integers(0, 400), min_size=0, max_size=20, unique=True),
           st.integers(0, 4))
    @settings(max_examples=80, deadline=None)
    def test_run_count(self, peaks, hw):
        peaks = sorted(peaks)
        if any(b - a <= 2 * hw + 1 for a, b in zip(peaks, peaks[1:])):
            return
        lab = rasterize_labels(PeakAnnotation(peaks), 401, hw).labels
        runs = int(np.sum(np.diff(np.concatenate(([0], lab))) == 1))
        assert runs == len(peaks)


class TestNormalizedTime:
    def test_endpoints(self):
        assert to_normalized_time(0, 100) == 0.0
        assert to_normalized_time(99, 100) == 1.0

    def test_midpoint(self):
        assert from_normalized_time(0.5, 101) == 50

    def test_round_trip_full_epoch(self):
        t = np.arange(3990)
        assert to_normalized_time(37, 3990) == 37 / 3989
        assert np.array_equal(from_normalized_time(to_normalized_time(t, 3990), 3990), t)

    @given(st.integers(2, 5000))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_any_length(self, n):
        t = np.arange(n)
        assert np.array_equal(from_normalized_time(to_normalized_time(t, n), n), t)

    def test_out_of_range(self):
        with pytest.raises(InvalidInputError):
            from_normalized_time(1.2, 10)
        with pytest.raises(InvalidInputError):
            from_normalized_time(-0.1, 10)
