"""Parity between the compiled kernels and the pure-Python fallback."""

import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcgpeaks import _kernels
from bcgpeaks import _kernels_py as py

ext = pytest.importorskip("bcgpeaks._ext._kernels")


def test_default_backend_is_compiled():
    assert _kernels.BACKEND == ext.BACKEND != py.BACKEND


def test_env_forces_fallback():
    code = "from bcgpeaks import _kernels; print(_kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True,
                         env={"BCGPEAKS_PURE_PYTHON": "1", "PATH": ""})
    assert out.stdout.strip() == "python"


def _cost(rng, n, m):
    if rng.uniform() < 0.3:  # heavy ties
        return rng.integers(0, 3, size=(n, m)).astype(float)
    return rng.uniform(size=(n, m))


def test_lap_solve_parity():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(n, 10))
        c = _cost(rng, n, m)
        a_cols, a_u, a_v = py.lap_solve(c)
        b_cols, b_u, b_v = ext.lap_solve(c)
        assert np.array_equal(a_cols, b_cols)
        assert np.allclose(a_u, b_u, atol=1e-12) and np.allclose(a_v, b_v, atol=1e-12)
        rows = np.arange(n)
        # complementary slackness on the returned duals
        red = c - a_u[:, None] - a_v[None, :]
        assert red.min() >= -1e-12
        assert np.allclose(red[rows, a_cols], 0.0, atol=1e-12)


def test_lap_solve_rejects_tall():
    for mod in (py, ext):
        with pytest.raises(ValueError):
            mod.lap_solve(np.zeros((3, 2)))


def test_lex_assign_parity():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = int(rng.integers(1, 6))
        m = int(rng.integers(n, 8))
        c = rng.integers(0, 2, size=(n, m)).astype(float)
        cols, u, v = py.lap_solve(c)
        tight = np.abs(c - u[:, None] - v[None, :]) <= 1e-9
        required = v < -1e-9
        for rows_small in (True, False):
            assert np.array_equal(py.lex_assign(tight, required, rows_small),
                                  ext.lex_assign(tight, required, rows_small))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 300), max_size=60, unique=True), st.integers(1, 40), st.booleans())
def test_cluster_starts_parity(cands, delta, anchored):
    c = np.array(sorted(cands), dtype=np.int64)
    assert np.array_equal(py.cluster_starts(c, delta, anchored), ext.cluster_starts(c, delta, anchored))


def test_layer_norm_parity():
    rng = np.random.default_rng(2)
    for n, c in [(1, 1), (3, 7), (50, 128), (17, 2)]:
        x = rng.normal(3.0, 2.0, size=(n, c))
        w, b = rng.normal(size=c), rng.normal(size=c)
        g = rng.normal(size=(n, c))
        fa = py.layer_norm_fwd(x, w, b, 1e-5)
        fb = ext.layer_norm_fwd(x, w, b, 1e-5)
        for a, bb in zip(fa, fb):
            assert np.allclose(a, bb, rtol=0, atol=1e-12)
        ba = py.layer_norm_bwd(g, fa[1], fa[2], w)
        bb_ = ext.layer_norm_bwd(g, fa[1], fa[2], w)
        for a, bb in zip(ba, bb_):
            assert np.allclose(a, bb, rtol=0, atol=1e-11)


def test_softmax_rows_parity():
    rng = np.random.default_rng(3)
    for n, c, r in [(1, 1, None), (6, 5, 3), (40, 17, None), (12, 9, 1)]:
        s = 4 * rng.normal(size=(n, c))
        bias = None if r is None else rng.normal(size=(r, c))
        a = py.softmax_rows(s.copy(), 0.3, bias)
        b = ext.softmax_rows(s.copy(), 0.3, bias)
        assert np.allclose(a, b, rtol=0, atol=1e-15)
        assert np.allclose(b.sum(axis=1), 1.0, rtol=0, atol=1e-14)
        g = rng.normal(size=(n, c))
        assert np.allclose(py.softmax_rows_bwd(g, a, 0.3), ext.softmax_rows_bwd(g, a, 0.3),
                           rtol=0, atol=1e-14)


def test_softmax_rows_bias_rows_cycle():
    s = np.zeros((4, 2))
    bias = np.array([[0.0, np.log(3.0)], [np.log(3.0), 0.0]])
    for mod in (py, ext):
        out = mod.softmax_rows(s.copy(), 1.0, bias)
        assert np.allclose(out, [[0.25, 0.75], [0.75, 0.25]] * 2, atol=1e-15)


def test_softmax_rows_bad_bias():
    with pytest.raises(ValueError):
        ext.softmax_rows(np.zeros((3, 2)), 1.0, np.zeros((2, 2)))
