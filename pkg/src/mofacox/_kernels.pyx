# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Mirrors :mod:`mofacox._fallback` function for function; the two must agree
to rounding.
"""

import numpy as np

from libc.math cimport fabs, sqrt


def riskset_first_moments(const double[::1] w, const double[:, :] x,
                          const Py_ssize_t[::1] first_event):
    """Reverse-time sums of ``w_k x_k`` read at each event's tie-group start.

    ``w`` and the rows of ``x`` are in ascending time order.
    """
    cdef Py_ssize_t n = x.shape[0], q = x.shape[1], d = first_event.shape[0]
    cdef Py_ssize_t i, j, e, target
    acc_arr = np.zeros(q, dtype=np.float64)
    out_arr = np.empty((d, q), dtype=np.float64)
    cdef double[::1] acc = acc_arr
    cdef double[:, ::1] out = out_arr
    cdef double wi
    # events are visited from the latest back to the earliest
    e = d - 1
    i = n - 1
    while e >= 0:
        target = first_event[e]
        while i >= target:
            wi = w[i]
            for j in range(q):
                acc[j] += wi * x[i, j]
            i -= 1
        for j in range(q):
            out[e, j] = acc[j]
        e -= 1
    return out_arr


def cd_lasso(const double[::1, :] x, const double[::1] c,
             const double[::1, :] m, double inv_n,
             const double[::1] g, const double[::1] beta, double[::1] v,
             const double[::1] lam, double tol, int max_sweeps):
    """Coordinate descent on the local quadratic model of the Cox loss.

    Minimises ``g'd + d'Hd/2 + sum(lam*|beta + d|)`` over ``d = v - beta``
    with ``H = X' diag(c) X - inv_n * M'M``; ``v`` is updated in place.
    Returns the number of sweeps used.
    """
    cdef Py_ssize_t n = x.shape[0], q = x.shape[1], nd = m.shape[0]
    cdef Py_ssize_t i, j, k, sweep = 0
    cdef double hjj, rj, z, vnew, delta, change, tmp
    u_arr = np.zeros(n, dtype=np.float64)
    s_arr = np.zeros(nd, dtype=np.float64)
    diag_arr = np.zeros(q, dtype=np.float64)
    cdef double[::1] u = u_arr
    cdef double[::1] s = s_arr
    cdef double[::1] diag = diag_arr
    cdef bint full = True, any_new
    cdef char[::1] active
    active_arr = np.zeros(q, dtype=np.int8)
    active = active_arr

    for j in range(q):
        tmp = 0.0
        for i in range(n):
            tmp += c[i] * x[i, j] * x[i, j]
        hjj = 0.0
        for k in range(nd):
            hjj += m[k, j] * m[k, j]
        diag[j] = tmp - inv_n * hjj
        delta = v[j] - beta[j]
        if delta != 0.0:
            for i in range(n):
                u[i] += x[i, j] * delta
            for k in range(nd):
                s[k] += m[k, j] * delta
        if v[j] != 0.0 or lam[j] == 0.0:
            active[j] = 1

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
            rj = g[j]
            for i in range(n):
                rj += x[i, j] * c[i] * u[i]
            tmp = 0.0
            for k in range(nd):
                tmp += m[k, j] * s[k]
            rj -= inv_n * tmp
            z = hjj * v[j] - rj
            if z > lam[j]:
                vnew = (z - lam[j]) / hjj
            elif z < -lam[j]:
                vnew = (z + lam[j]) / hjj
            else:
                vnew = 0.0
            delta = vnew - v[j]
            if delta != 0.0:
                for i in range(n):
                    u[i] += x[i, j] * delta
                for k in range(nd):
                    s[k] += m[k, j] * delta
                v[j] = vnew
                if hjj * fabs(delta) > change:
                    change = hjj * fabs(delta)
                if not active[j]:
                    active[j] = 1
                    any_new = True
        if change <= tol:
            if full and not any_new:
                break
            full = True
        else:
            full = False
    return sweep
