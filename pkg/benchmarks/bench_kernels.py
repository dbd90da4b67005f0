"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel: best-of-N wall time for each backend and the
speed-up of the compiled one.
"""

import argparse
import time

import numpy as np

from bcgpeaks import _kernels_py as py

try:
    from bcgpeaks._ext import _kernels as ext
except ImportError:  # extension not built
    ext = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    # training-time matching: 96 queries against ~35 beats, one per epoch in a batch
    costs = [rng.uniform(size=(35, 96)) for _ in range(32)]
    tie = rng.integers(0, 3, size=(40, 40)).astype(float)
    cols, u, v = py.lap_solve(tie)
    tight = np.abs(tie - u[:, None] - v[None, :]) <= 1e-9
    required = v < -1e-9
    cands = np.flatnonzero(rng.uniform(size=4000) < 0.3)
    x = rng.normal(size=(1330 * 8, 32))
    w, b = rng.normal(size=32), rng.normal(size=32)
    _, xhat, rstd = py.layer_norm_fwd(x, w, b, 1e-5)
    g = rng.normal(size=x.shape)
    # encoder self-attention scores: batch 32 x 4 heads x 167 x 167
    scores = rng.normal(size=(32 * 4 * 167, 167))
    probs = py.softmax_rows(scores.copy(), 0.17)
    gs = rng.normal(size=scores.shape)
    return {
        "lap_solve 35x96 x32": lambda m: [m.lap_solve(c) for c in costs],
        "lex_assign 40x40 ties": lambda m: m.lex_assign(tight, required, True),
        "cluster_starts anchored": lambda m: [m.cluster_starts(cands, d, True) for d in (5, 20, 40)],
        "layer_norm fwd 10640x32": lambda m: m.layer_norm_fwd(x, w, b, 1e-5),
        "layer_norm bwd 10640x32": lambda m: m.layer_norm_bwd(g, xhat, rstd, w),
        "softmax_rows 21376x167": lambda m: m.softmax_rows(scores.copy(), 0.17),
        "softmax_rows_bwd 21376x167": lambda m: m.softmax_rows_bwd(gs, probs, 0.17),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'python [ms]':>12}{'compiled [ms]':>15}{'speed-up':>10}")
    for name, run in cases(rng).items():
        t_py = best_of(lambda: run(py), args.repeat)
        if ext is None:
            print(f"{name:<28}{1e3 * t_py:>12.3f}{'n/a':>15}{'':>10}")
            continue
        t_ext = best_of(lambda: run(ext), args.repeat)
        print(f"{name:<28}{1e3 * t_py:>12.3f}{1e3 * t_ext:>15.3f}{t_py / t_ext:>9.1f}x")


if __name__ == "__main__":
    main()
