"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def riskset_first_moments(w, x, first_event):
    # reverse cumulative sum, then read at each event's tie-group start
    wx = w[:, None] * x
    rev = np.cumsum(wx[::-1], axis=0)[::-1]
    return np.ascontiguousarray(rev[first_event])


def cd_lasso(x, c, m, inv_n, g, beta, v, lam, tol, max_sweeps):
    n, q = x.shape
    diag = np.einsum("i,ij,ij->j", c, x, x) - inv_n * np.einsum("kj,kj->j", m, m)
    d = v - beta
    u = x @ d
    s = m @ d
    active = (v != 0.0) | (lam == 0.0)
    full = True
    sweep = 0
    while sweep < max_sweeps:
        sweep += 1
        change = 0.0
        any_new = False
        for j in range(q):
            if not full and not active[j]:
                continue
            hjj = diag[j]
            if hjj <= 1e-14:
                continue
            xj = x[:, j]
            mj = m[:, j]
            rj = g[j] + xj @ (c * u) - inv_n * (mj @ s)
            z = hjj * v[j] - rj
            if z > lam[j]:
                vnew = (z - lam[j]) / hjj
            elif z < -lam[j]:
                vnew = (z + lam[j]) / hjj
            else:
                vnew = 0.0
            delta = vnew - v[j]
            if delta != 0.0:
                u += xj * delta
                s += mj * delta
                v[j] = vnew
                change = max(change, hjj * abs(delta))
                if not active[j]:
                    active[j] = True
                    any_new = True
        if change <= tol:
            if full and not any_new:
                break
            full = True
        else:
            full = False
    return sweep
