# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``bcgpeaks._kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, sqrt

cnp.import_array()

BACKEND = "cython"


def lap_solve(cost):
    cdef double[:, ::1] a = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1]
    if n > m:
        raise ValueError("lap_solve needs rows <= cols")
    u_arr = np.zeros(n + 1)
    v_arr = np.zeros(m + 1)
    p_arr = np.zeros(m + 1, dtype=np.int64)
    way_arr = np.zeros(m + 1, dtype=np.int64)
    minv_arr = np.empty(m + 1)
    used_arr = np.empty(m + 1, dtype=np.uint8)
    cdef double[::1] u = u_arr, v = v_arr, minv = minv_arr
    cdef cnp.int64_t[::1] p = p_arr, way = way_arr
    cdef unsigned char[::1] used = used_arr
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
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
    cdef cnp.int64_t[::1] cr = col_of_row
    for j in range(1, m + 1):
        if p[j]:
            cr[p[j] - 1] = j - 1
    return col_of_row, u_arr[1:].copy(), v_arr[1:].copy()


cdef bint _augment(Py_ssize_t s, unsigned char[:, ::1] adj, bint transpose,
                   unsigned char[::1] target_ok, unsigned char[::1] seen,
                   cnp.int64_t[::1] owner, Py_ssize_t n_targets):
    cdef Py_ssize_t t
    cdef bint edge
    for t in range(n_targets):
        edge = adj[t, s] if transpose else adj[s, t]
        if not edge or not target_ok[t] or seen[t]:
            continue
        seen[t] = 1
        if owner[t] < 0 or _augment(owner[t], adj, transpose, target_ok, seen, owner, n_targets):
            owner[t] = s
            return True
    return False


cdef bint _saturates(unsigned char[:, ::1] adj, bint transpose, unsigned char[::1] source_on,
                     unsigned char[::1] target_ok, Py_ssize_t n_sources, Py_ssize_t n_targets,
                     unsigned char[::1] seen, cnp.int64_t[::1] owner):
    cdef Py_ssize_t s, t
    for t in range(n_targets):
        owner[t] = -1
    for s in range(n_sources):
        if not source_on[s]:
            continue
        for t in range(n_targets):
            seen[t] = 0
        if not _augment(s, adj, transpose, target_ok, seen, owner, n_targets):
            return False
    return True


cdef bint _feasible(unsigned char[:, ::1] adj, unsigned char[::1] small_free,
                    unsigned char[::1] large_free, unsigned char[::1] req_free,
                    unsigned char[::1] required, Py_ssize_t n, Py_ssize_t m,
                    unsigned char[::1] seen, cnp.int64_t[::1] owner):
    cdef Py_ssize_t j
    if not _saturates(adj, False, small_free, large_free, n, m, seen, owner):
        return False
    for j in range(m):
        req_free[j] = required[j] and large_free[j]
    return _saturates(adj, True, req_free, small_free, m, n, seen, owner)


def lex_assign(tight, required_large, bint rows_are_small):
    cdef unsigned char[:, ::1] adj = np.ascontiguousarray(tight, dtype=np.uint8)
    cdef unsigned char[::1] required = np.ascontiguousarray(required_large, dtype=np.uint8)
    cdef Py_ssize_t n = adj.shape[0], m = adj.shape[1]
    cdef Py_ssize_t biggest = n if n > m else m
    cdef unsigned char[::1] small_free = np.ones(n, dtype=np.uint8)
    cdef unsigned char[::1] large_free = np.ones(m, dtype=np.uint8)
    cdef unsigned char[::1] req_free = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] seen = np.zeros(biggest, dtype=np.uint8)
    cdef cnp.int64_t[::1] owner = np.zeros(biggest, dtype=np.int64)
    partner_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] partner = partner_arr
    cdef Py_ssize_t i, j, k, n_opts, pick
    opts_arr = np.empty(biggest + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] opts = opts_arr
    if rows_are_small:
        for i in range(n):
            n_opts = 0
            for j in range(m):
                if adj[i, j] and large_free[j]:
                    opts[n_opts] = j
                    n_opts += 1
            for k in range(n_opts):
                j = opts[k]
                small_free[i] = 0
                large_free[j] = 0
                if k == n_opts - 1 or _feasible(adj, small_free, large_free, req_free,
                                                required, n, m, seen, owner):
                    partner[i] = j
                    break
                small_free[i] = 1
                large_free[j] = 1
        return partner_arr
    for j in range(m):
        n_opts = 0
        for i in range(n):
            if adj[i, j] and small_free[i]:
                opts[n_opts] = i
                n_opts += 1
        if not required[j]:
            opts[n_opts] = -1
            n_opts += 1
        for k in range(n_opts):
            pick = opts[k]
            large_free[j] = 0
            if pick >= 0:
                small_free[pick] = 0
            if k == n_opts - 1 or _feasible(adj, small_free, large_free, req_free,
                                            required, n, m, seen, owner):
                if pick >= 0:
                    partner[pick] = j
                break
            large_free[j] = 1
            if pick >= 0:
                small_free[pick] = 1
    return partner_arr


def cluster_starts(candidates, long delta, bint anchored=False):
    cdef cnp.int64_t[::1] c = np.ascontiguousarray(candidates, dtype=np.int64)
    cdef Py_ssize_t n = c.shape[0], k, count = 0
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    if n == 0:
        return out
    cdef cnp.int64_t anchor = c[0]
    o[0] = 0
    count = 1
    for k in range(1, n):
        if anchored:
            if c[k] - anchor >= delta:
                o[count] = k
                count += 1
                anchor = c[k]
        elif c[k] - c[k - 1] >= delta:
            o[count] = k
            count += 1
    return out[:count].copy()


def layer_norm_fwd(x, weight, bias, double eps):
    """Row-wise normalization of a C-contiguous ``[N, C]`` array."""
    cdef double[:, ::1] a = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], c = a.shape[1], i, j
    cdef double[::1] w = np.ascontiguousarray(weight, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(bias, dtype=np.float64)
    out_arr = np.empty((n, c))
    xhat_arr = np.empty((n, c))
    rstd_arr = np.empty(n)
    cdef double[:, ::1] out = out_arr, xh = xhat_arr
    cdef double[::1] rs = rstd_arr
    cdef double mu, var, d, r
    with nogil:
        for i in range(n):
            mu = 0.0
            for j in range(c):
                mu += a[i, j]
            mu /= c
            var = 0.0
            for j in range(c):
                d = a[i, j] - mu
                var += d * d
            var /= c
            r = 1.0 / sqrt(var + eps)
            rs[i] = r
            for j in range(c):
                d = (a[i, j] - mu) * r
                xh[i, j] = d
                out[i, j] = d * w[j] + b[j]
    return out_arr, xhat_arr, rstd_arr


def layer_norm_bwd(g, xhat, rstd, weight):
    cdef double[:, ::1] gg = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[:, ::1] xh = xhat
    cdef double[::1] rs = rstd
    cdef double[::1] w = np.ascontiguousarray(weight, dtype=np.float64)
    cdef Py_ssize_t n = gg.shape[0], c = gg.shape[1], i, j
    gx_arr = np.empty((n, c))
    gw_arr = np.zeros(c)
    gb_arr = np.zeros(c)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] gw = gw_arr, gb = gb_arr
    cdef double m1, m2, t
    with nogil:
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(c):
                t = gg[i, j] * w[j]
                m1 += t
                m2 += t * xh[i, j]
                gw[j] += gg[i, j] * xh[i, j]
                gb[j] += gg[i, j]
            m1 /= c
            m2 /= c
            for j in range(c):
                gx[i, j] = rs[i] * (gg[i, j] * w[j] - m1 - xh[i, j] * m2)
    return gx_arr, gw_arr, gb_arr


def softmax_rows(s, double scale, bias=None):
    cdef double[:, ::1] a = s
    cdef Py_ssize_t n = a.shape[0], c = a.shape[1], i, j, r = 1
    cdef const double[:, ::1] b
    cdef bint has_bias = bias is not None
    if has_bias:
        b = np.ascontiguousarray(bias, dtype=np.float64)
        r = b.shape[0]
        if b.shape[1] != c or n % r:
            raise ValueError("bias must be [R, C] with R dividing the row count")
    cdef double mx, tot, v
    with nogil:
        for i in range(n):
            mx = -INFINITY
            for j in range(c):
                v = a[i, j] * scale
                if has_bias:
                    v = v + b[i % r, j]
                a[i, j] = v
                if v > mx:
                    mx = v
            for j in range(c):
                a[i, j] -= mx
    np.exp(s, out=s)  # numpy's vectorised exp is several times faster than libm's
    with nogil:
        for i in range(n):
            tot = 0.0
            for j in range(c):
                tot += a[i, j]
            tot = 1.0 / tot
            for j in range(c):
                a[i, j] *= tot
    return s


def softmax_rows_bwd(g, w, double scale):
    cdef double[:, ::1] gg = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[:, ::1] ww = w
    cdef Py_ssize_t n = gg.shape[0], c = gg.shape[1], i, j
    out_arr = np.empty((n, c))
    cdef double[:, ::1] out = out_arr
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(c):
                dot += gg[i, j] * ww[i, j]
            for j in range(c):
                out[i, j] = scale * ww[i, j] * (gg[i, j] - dot)
    return out_arr
