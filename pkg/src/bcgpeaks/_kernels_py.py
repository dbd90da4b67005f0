"""Pure-Python implementations of the compiled kernels in ``_ext._kernels``.

Both modules expose the same three functions with identical semantics;
:mod:`bcgpeaks._kernels` picks one at import time.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def lap_solve(cost: np.ndarray):
    """Shortest-augmenting-path Hungarian method for an ``n x m`` matrix, n <= m.

    Returns ``(col_of_row, u, v)`` where ``u`` and ``v`` are dual
    potentials with ``cost[i, j] - u[i] - v[j] >= 0`` (up to rounding) and
    equality on the assigned pairs. Every column left unassigned has
    ``v == 0`` and all ``v <= 0``.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n > m:
        raise ValueError("lap_solve needs rows <= cols")
    # 1-based bookkeeping; column 0 is the virtual root
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    a = np.zeros((n + 1, m + 1))
    a[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:].copy(), v[1:].copy()


def _saturates(adj, sources, targets_ok):
    """True if every node in ``sources`` can be matched into ``targets_ok``."""
    owner = {}

    def try_node(s, seen):
        for t in adj[s]:
            if not targets_ok[t] or t in seen:
                continue
            seen.add(t)
            if t not in owner or try_node(owner[t], seen):
                owner[t] = s
                return True
        return False

    for s in sources:
        if not try_node(s, set()):
            return False
    return True


def lex_assign(tight: np.ndarray, required_large: np.ndarray, rows_are_small: bool) -> np.ndarray:
    """Lexicographically smallest optimal assignment inside a tight-edge graph.

    ``tight`` is an ``n_small x m_large`` boolean matrix of zero-reduced-cost
    edges; ``required_large`` marks large-side nodes that every optimal
    assignment must cover. Original matrix rows are the small side when
    ``rows_are_small``. Returns the large-side partner of each small node.
    """
    tight = np.asarray(tight, dtype=bool)
    n, m = tight.shape
    required = np.asarray(required_large, dtype=bool)
    small_adj = [list(np.flatnonzero(tight[i])) for i in range(n)]
    large_adj = [list(np.flatnonzero(tight[:, j])) for j in range(m)]
    small_free = np.ones(n, dtype=bool)
    large_free = np.ones(m, dtype=bool)
    partner = np.full(n, -1, dtype=np.int64)

    def feasible():
        rem_small = np.flatnonzero(small_free)
        if not _saturates(small_adj, rem_small, large_free):
            return False
        rem_req = np.flatnonzero(required & large_free)
        return _saturates(large_adj, rem_req, small_free)

    if rows_are_small:
        for i in range(n):
            opts = [j for j in small_adj[i] if large_free[j]]
            for k, j in enumerate(opts):
                small_free[i] = False
                large_free[j] = False
                if k == len(opts) - 1 or feasible():
                    partner[i] = j
                    break
                small_free[i] = True
                large_free[j] = True
        return partner

    for j in range(m):
        opts = [i for i in large_adj[j] if small_free[i]]
        if not required[j]:
            opts.append(-1)
        for k, i in enumerate(opts):
            large_free[j] = False
            if i >= 0:
                small_free[i] = False
            if k == len(opts) - 1 or feasible():
                if i >= 0:
                    partner[i] = j
                break
            large_free[j] = True
            if i >= 0:
                small_free[i] = True
    return partner


def cluster_starts(candidates: np.ndarray, delta: int, anchored: bool = False) -> np.ndarray:
    """Positions in ``candidates`` (ascending indices) that open a new cluster.

    Chained mode opens a cluster when the gap to the previous candidate is
    ``>= delta``; anchored mode when the distance to the cluster's first
    candidate is ``>= delta``.
    """
    c = np.asarray(candidates, dtype=np.int64)
    if c.size == 0:
        return np.zeros(0, dtype=np.int64)
    if not anchored:
        gaps = np.diff(c)
        return np.concatenate(([0], np.flatnonzero(gaps >= delta) + 1)).astype(np.int64)
    starts = [0]
    anchor = c[0]
    for k in range(1, c.size):
        if c[k] - anchor >= delta:
            starts.append(k)
            anchor = c[k]
    return np.asarray(starts, dtype=np.int64)


def layer_norm_fwd(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, eps: float):
    """Normalize each row of ``[N, C]``; returns ``(out, xhat, rstd)``."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=1) + eps)
    xhat = xc * rstd[:, None]
    return xhat * weight + bias, xhat, rstd


def layer_norm_bwd(g: np.ndarray, xhat: np.ndarray, rstd: np.ndarray, weight: np.ndarray):
    gx = g * weight
    ga = rstd[:, None] * (gx - gx.mean(axis=1, keepdims=True)
                         - xhat * (gx * xhat).mean(axis=1, keepdims=True))
    return ga, (g * xhat).sum(axis=0), g.sum(axis=0)


def softmax_rows(s: np.ndarray, scale: float, bias=None) -> np.ndarray:
    """In place: each row of ``[N, C]`` becomes softmax(scale * row + bias).

    ``bias`` is ``[R, C]`` with R dividing N; row i uses ``bias[i % R]``.
    """
    n, c = s.shape
    s *= scale
    if bias is not None:
        s3 = s.reshape(-1, bias.shape[0], c)
        s3 += bias
    s -= s.max(axis=1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=1, keepdims=True)
    return s


def softmax_rows_bwd(g: np.ndarray, w: np.ndarray, scale: float) -> np.ndarray:
    """Gradient of the scores given the output gradient ``g`` and ``w``."""
    r = np.einsum("ij,ij->i", g, w)[:, None]
    gs = g - r
    gs *= w
    gs *= scale
    return gs
