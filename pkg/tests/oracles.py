"""Independent reference implementations used as test oracles.

Each one follows the defining rule as directly as possible and shares no
code with the package.
"""

import itertools
import math

import numpy as np


def tps_reference(y, tau, delta):
    """O(T^2) peak suppression.

    Candidates a < b share a cluster unless a run of at least delta - 1
    consecutive non-candidates lies strictly between them. A candidate is
    kept when no cluster-mate beats it (higher value, or equal value at a
    smaller index).
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    cand = y >= tau
    idx = np.flatnonzero(cand)
    if idx.size == 0:
        return []
    w = delta - 1
    # quiet[s] = 1 if samples s .. s+w-1 are all non-candidates
    csum = np.concatenate(([0], np.cumsum(cand)))
    starts = np.arange(n - w + 1) if w <= n else np.zeros(0, dtype=int)
    quiet = (csum[starts + w] - csum[starts]) == 0
    qsum = np.concatenate(([0], np.cumsum(quiet)))
    a = idx[:, None]
    b = idx[None, :]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    # windows [s, s+w-1] strictly inside (lo, hi): lo+1 <= s <= hi-w
    s_lo = np.clip(lo + 1, 0, quiet.size)
    s_hi = np.clip(hi - w + 1, 0, quiet.size)
    split = np.where(s_hi > s_lo, qsum[s_hi] - qsum[s_lo], 0) > 0
    same = ~split
    ya, yb = y[a], y[b]
    beaten = same & ((yb > ya) | ((yb == ya) & (b < a)))
    keep = ~beaten.any(axis=1)
    return [(int(t), float(y[t])) for t in idx[keep]]


def exhaustive_min_cost(c):
    """Minimum total of a maximum-size one-to-one assignment (fsum, exact)."""
    c = np.asarray(c, dtype=float)
    n, m = c.shape
    if n <= m:
        return min(math.fsum(c[i, p[i]] for i in range(n))
                   for p in itertools.permutations(range(m), n))
    return exhaustive_min_cost(c.T)


def exhaustive_lex_assignment(c):
    """Lexicographically smallest sorted pair list among minimum-cost
    assignments."""
    c = np.asarray(c, dtype=float)
    n, m = c.shape
    best, best_pairs = None, None
    if n <= m:
        for p in itertools.permutations(range(m), n):
            pairs = sorted((i, p[i]) for i in range(n))
            cost = math.fsum(c[i, j] for i, j in pairs)
            if best is None or cost < best or (cost == best and pairs < best_pairs):
                best, best_pairs = cost, pairs
    else:
        for p in itertools.permutations(range(n), m):
            pairs = sorted((p[j], j) for j in range(m))
            cost = math.fsum(c[i, j] for i, j in pairs)
            if best is None or cost < best or (cost == best and pairs < best_pairs):
                best, best_pairs = cost, pairs
    return best, best_pairs


def tolerance_reference(pred, gt, delta):
    """Max-cardinality, then min-offset, matching by exhaustive search."""
    pred, gt = list(pred), list(gt)
    best = (0, 0)
    small, large, flip = (pred, gt, False) if len(pred) <= len(gt) else (gt, pred, True)
    for perm in itertools.permutations(range(len(large)), len(small)):
        d = [abs(small[i] - large[j]) for i, j in enumerate(perm)]
        ok = [x for x in d if x <= delta]
        key = (-len(ok), sum(ok))
        if key < (-best[0], best[1]):
            best = (len(ok), sum(ok))
    return best


def finite_difference_check(loss_fn, named_params, eps=1e-5, floor=1e-8, inert=()):
    """Max relative error of backprop gradients against central differences.

    ``named_params`` maps names to Parameters; ``loss_fn()`` returns a
    scalar Tensor. Parameters whose name contains any ``inert`` substring
    have structurally zero gradients; their analytic gradient is returned
    separately as a max-abs value instead of a relative error.
    """
    params = dict(named_params)
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    worst, worst_name, inert_abs = 0.0, None, 0.0
    for name, p in params.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        if any(s in name for s in inert):
            inert_abs = max(inert_abs, float(np.max(np.abs(g))))
            continue
        flat = p.data.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            num[i] = (up - down) / (2 * eps)
        a = g.reshape(-1)
        err = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
        if err.size and err.max() > worst:
            worst, worst_name = float(err.max()), name
    return worst, worst_name, inert_abs
