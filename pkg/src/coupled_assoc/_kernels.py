"""Compiled inner loops for recall.  Mirrors the numpy reference in recall.py."""
import numba
import numpy as np

SAT_TOL = 1e-9


@numba.njit(cache=True, nogil=True)
def _violated(W, x, i):
    h = 0.0
    scale = 0.0
    for j in range(W.shape[1]):
        h += W[i, j] * x[j]
        scale += abs(W[i, j]) * abs(x[j])
    return h, abs(h) > SAT_TOL * (1.0 + scale)


@numba.njit(cache=True, nogil=True)
def cluster_kernel(W, absum, x, frozen, phi, t_max):
    """In-place Alg. 1 on sub-state ``x``; returns satisfied."""
    m, n = W.shape
    y = np.zeros(m)
    for _ in range(t_max):
        sat = True
        for i in range(m):
            h, bad = _violated(W, x, i)
            if bad:
                sat = False
                y[i] = 1.0 if h < 0 else -1.0
            else:
                y[i] = 0.0
        if sat:
            return True
        for j in range(n):
            if frozen[j] or absum[j] == 0.0:
                continue
            g = 0.0
            for i in range(m):
                g += W[i, j] * y[i]
            g /= absum[j]
            if abs(g) > phi:
                x[j] += 1.0 if g > 0 else -1.0
    for i in range(m):
        if _violated(W, x, i)[1]:
            return False
    return True


@numba.njit(cache=True, nogil=True)
def coupled_kernel(Ws, absums, members, x, frozen, phi, t_inner, t_outer):
    """In-place Alg. 2 over packed clusters; returns sweeps run."""
    nc, nm = members.shape
    sub = np.empty(nm)
    fr = np.empty(nm, dtype=np.bool_)
    sweeps = 0
    for _ in range(t_outer):
        sweeps += 1
        changed = False
        for c in range(nc):
            for k in range(nm):
                sub[k] = x[members[c, k]]
                fr[k] = frozen[members[c, k]]
            if cluster_kernel(Ws[c], absums[c], sub, fr, phi, t_inner):
                for k in range(nm):
                    if sub[k] != x[members[c, k]]:
                        changed = True
                        x[members[c, k]] = sub[k]
        if not changed:
            break
    return sweeps
