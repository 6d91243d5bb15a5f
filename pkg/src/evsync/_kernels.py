"""Compiled inner loops.

Both kernels have slow pure-numpy counterparts in the test suite; keep the
semantics here identical to those oracles.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def neighbor_filter(t, x, y, width, height, r_xy, r_t, k_min):
    """Keep mask for events with >= k_min other events in the box |dx|,|dy| <= r_xy, |dt| <= r_t.

    ``t`` must be non-decreasing. A padded occupancy grid is maintained over
    the sliding time window [t_i - r_t, t_i + r_t].
    """
    n = t.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    grid = np.zeros((height + 2 * r_xy, width + 2 * r_xy), dtype=np.int32)
    head = 0
    tail = 0
    side = 2 * r_xy + 1
    for i in range(n):
        ti = t[i]
        while head < n and t[head] <= ti + r_t:
            grid[y[head] + r_xy, x[head] + r_xy] += 1
            head += 1
        while t[tail] < ti - r_t:
            grid[y[tail] + r_xy, x[tail] + r_xy] -= 1
            tail += 1
        # the box includes event i itself
        need = k_min + 1
        count = 0
        for dy in range(side):
            row = y[i] + dy
            for dx in range(side):
                count += grid[row, x[i] + dx]
            if count >= need:
                break
        keep[i] = count >= need
    return keep


@njit(cache=True)
def _null_vector_8x9(a, rel_tol):
    """Null vector of an 8x9 matrix by Gaussian elimination with complete pivoting.

    Returns (f, ok); ok is False when the matrix is numerically rank deficient.
    """
    m = a.copy()
    perm = np.arange(9)
    first = 0.0
    for k in range(8):
        best = 0.0
        bi = k
        bj = k
        for i in range(k, 8):
            for j in range(k, 9):
                v = abs(m[i, j])
                if v > best:
                    best = v
                    bi = i
                    bj = j
        if k == 0:
            first = best
            if first == 0.0:
                return np.zeros(9), False
        if best <= rel_tol * first:
            return np.zeros(9), False
        if bi != k:
            for j in range(9):
                tmp = m[k, j]
                m[k, j] = m[bi, j]
                m[bi, j] = tmp
        if bj != k:
            for i in range(8):
                tmp = m[i, k]
                m[i, k] = m[i, bj]
                m[i, bj] = tmp
            tp = perm[k]
            perm[k] = perm[bj]
            perm[bj] = tp
        piv = m[k, k]
        for i in range(k + 1, 8):
            f = m[i, k] / piv
            if f != 0.0:
                for j in range(k, 9):
                    m[i, j] -= f * m[k, j]
    z = np.zeros(9)
    z[8] = 1.0
    for k in range(7, -1, -1):
        s = 0.0
        for j in range(k + 1, 9):
            s += m[k, j] * z[j]
        z[k] = -s / m[k, k]
    out = np.zeros(9)
    norm = 0.0
    for j in range(9):
        out[perm[j]] = z[j]
        norm += z[j] * z[j]
    norm = np.sqrt(norm)
    for j in range(9):
        out[j] /= norm
    return out, True


@njit(cache=True)
def _sym_residual(f, u1, v1, u2, v2):
    l2a = f[0, 0] * u1 + f[0, 1] * v1 + f[0, 2]
    l2b = f[1, 0] * u1 + f[1, 1] * v1 + f[1, 2]
    l2c = f[2, 0] * u1 + f[2, 1] * v1 + f[2, 2]
    l1a = f[0, 0] * u2 + f[1, 0] * v2 + f[2, 0]
    l1b = f[0, 1] * u2 + f[1, 1] * v2 + f[2, 1]
    e = u2 * l2a + v2 * l2b + l2c
    d1 = l1a * l1a + l1b * l1b
    d2 = l2a * l2a + l2b * l2b
    if d1 <= 0.0 or d2 <= 0.0:
        return np.inf
    return e * e * (1.0 / d1 + 1.0 / d2)


@njit(cache=True)
def lmeds_search(n1, n2, x1, x2, t1, t2, samples, rel_tol):
    """Score every minimal-sample model by its median squared symmetric distance.

    ``n1``/``n2`` are Hartley-normalized points used to build the 8x9 design
    matrices, ``x1``/``x2`` the pixel points used for scoring, and ``t1``/``t2``
    the normalizing similarities. Returns (best_index, best_median, best_F,
    n_degenerate). A model is only fully scored when it can still beat the
    running best, so the selection equals a brute-force argmin over medians.
    """
    m = samples.shape[0]
    n = x1.shape[0]
    need = (n - 1) // 2 + 1
    buf = np.empty(n)
    a = np.empty((8, 9))
    best_k = -1
    best_med = np.inf
    best_f = np.zeros((3, 3))
    n_degenerate = 0
    for k in range(m):
        for r in range(8):
            i = samples[k, r]
            ua, va = n1[i, 0], n1[i, 1]
            ub, vb = n2[i, 0], n2[i, 1]
            a[r, 0] = ub * ua
            a[r, 1] = ub * va
            a[r, 2] = ub
            a[r, 3] = vb * ua
            a[r, 4] = vb * va
            a[r, 5] = vb
            a[r, 6] = ua
            a[r, 7] = va
            a[r, 8] = 1.0
        fv, ok = _null_vector_8x9(a, rel_tol)
        if not ok:
            n_degenerate += 1
            continue
        fn = fv.reshape(3, 3)
        u, s, vt = np.linalg.svd(fn)
        s[2] = 0.0
        fn = (u * s) @ vt
        f = t2.T @ fn @ t1
        count = 0
        pruned = False
        for i in range(n):
            r = _sym_residual(f, x1[i, 0], x1[i, 1], x2[i, 0], x2[i, 1])
            buf[i] = r
            if r < best_med:
                count += 1
            if count + (n - i - 1) < need:
                pruned = True
                break
        if pruned:
            continue
        med = np.median(buf)
        if med < best_med:
            best_med = med
            best_k = k
            best_f = f.copy()
    return best_k, best_med, best_f, n_degenerate
