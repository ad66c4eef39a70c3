"""Compiled inner loops for repeated Q evaluation.

These mirror :func:`budgetalloc.allocator.evaluate_q` (plain bisection) without
building a trace. Row choice uses the same lexicographic order as
``recover_allocation``: highest ``v - alpha * c``, then lowest cost, then
lowest index. A row is matched when that choice equals its logged treatment.
"""
import numba
import numpy as np

STATUS_OK = 0
STATUS_INFEASIBLE = 1


@numba.njit(cache=True)
def _row_matched(v, c, i, ti, am):
    ct = c[i, ti]
    st = v[i, ti] - am * ct
    for j in range(v.shape[1]):
        if j == ti:
            continue
        cj = c[i, j]
        s = v[i, j] - am * cj
        if s > st or (s == st and (cj < ct or (cj == ct and j < ti))):
            return False
    return True


@numba.njit(cache=True)
def _local_matched(vr, cr, ti, am):
    ct = cr[ti]
    st = vr[ti] - am * ct
    for j in range(vr.shape[0]):
        if j == ti:
            continue
        cj = cr[j]
        s = vr[j] - am * cj
        if s > st or (s == st and (cj < ct or (cj == ct and j < ti))):
            return False
    return True


@numba.njit(cache=True)
def _eom(v, c, t, y, z, am, pr, pc, pval, which):
    """Matched-set sums at ``am``; entry (pr, pc) of v (which=0) or c (which=1)
    is replaced by ``pval`` when ``pr >= 0``."""
    sy = 0.0
    sz = 0.0
    n = 0
    K = v.shape[1]
    vr = np.empty(K)
    cr = np.empty(K)
    if pr >= 0:
        for j in range(K):
            vr[j] = v[pr, j]
            cr[j] = c[pr, j]
        if which == 0:
            vr[pc] = pval
        else:
            cr[pc] = pval
    for i in range(v.shape[0]):
        ti = t[i]
        if i == pr:
            ok = _local_matched(vr, cr, ti, am)
        else:
            ok = _row_matched(v, c, i, ti, am)
        if ok:
            sy += y[i]
            sz += z[i]
            n += 1
    return sy, sz, n


@numba.njit(cache=True)
def bisect(v, c, t, y, z, target, eps, amax, iters, pr, pc, pval, which):
    """Returns (Q, alpha_final, status)."""
    lo = 0.0
    hi = amax
    am = 0.0
    V = 0.0
    lowered = False
    for _ in range(iters):
        am = 0.5 * (lo + hi)
        sy, sz, n = _eom(v, c, t, y, z, am, pr, pc, pval, which)
        if n > 0:
            V = sy / n
            C = sz / n
        else:
            V = 0.0
            C = 0.0
        if abs(C - target) <= eps:
            return V, am, STATUS_OK
        if C > target:
            lo = am
        else:
            hi = am
            lowered = True
    if not lowered:
        sy, sz, n = _eom(v, c, t, y, z, amax, pr, pc, pval, which)
        C = sz / n if n > 0 else 0.0
        if C - target > eps:
            return V, am, STATUS_INFEASIBLE
    return V, am, STATUS_OK


@numba.njit(cache=True)
def q_stack(vs, cs, t, y, z, target, eps, amax, iters):
    """Q for each ``(vs[k or 0], cs[k or 0])``; one of the stacks may have length 1."""
    N = max(vs.shape[0], cs.shape[0])
    q = np.empty(N)
    alpha = np.empty(N)
    status = np.empty(N, dtype=np.int64)
    for k in range(N):
        kv = k if vs.shape[0] > 1 else 0
        kc = k if cs.shape[0] > 1 else 0
        q[k], alpha[k], status[k] = bisect(
            vs[kv], cs[kc], t, y, z, target, eps, amax, iters, -1, 0, 0.0, 0
        )
    return q, alpha, status


@numba.njit(cache=True)
def q_entries(v, c, t, y, z, target, eps, amax, iters, rows, cols, vals, which):
    """Q with a single entry overridden, once per (rows[k], cols[k], vals[k])."""
    N = rows.shape[0]
    q = np.empty(N)
    alpha = np.empty(N)
    status = np.empty(N, dtype=np.int64)
    for k in range(N):
        q[k], alpha[k], status[k] = bisect(
            v, c, t, y, z, target, eps, amax, iters, rows[k], cols[k], vals[k], which
        )
    return q, alpha, status
