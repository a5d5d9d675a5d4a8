"""Central and noncentral chi-squared tail probabilities."""

import math

import numpy as np
from scipy.special import gammaincc, gammainccinv, gammaln

_SERIES_EPS = 1e-14


def chi_square_sf(x, k):
    """P(chi2_k > x) via the regularised upper incomplete gamma function."""
    if k <= 0:
        raise ValueError("degrees of freedom must be positive")
    x = np.asarray(x, dtype=np.float64)
    out = gammaincc(k / 2.0, np.maximum(x, 0.0) / 2.0)
    return float(out) if out.ndim == 0 else out


def chi_square_isf(alpha, k):
    """Upper ``alpha`` quantile of chi2_k."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return float(2.0 * gammainccinv(k / 2.0, alpha))


def _poisson_logpmf(j, mu):
    return j * math.log(mu) - mu - gammaln(j + 1.0)


def chi_square_sf_nc(x, k, h):
    """P(chi2_k(h) > x) for noncentrality ``h``.

    Poisson(h/2) mixture of central tails, summed outward from the mode
    until the mixing weights drop below 1e-14.
    """
    if h < 0:
        raise ValueError("noncentrality must be nonnegative")
    if h == 0:
        return chi_square_sf(x, k)
    if x <= 0:
        return 1.0
    mu = h / 2.0
    mode = int(math.floor(mu))
    total = 0.0
    j = mode
    while True:
        wt = math.exp(_poisson_logpmf(j, mu))
        total += wt * chi_square_sf(x, k + 2 * j)
        if wt < _SERIES_EPS and j > mode:
            break
        j += 1
    j = mode - 1
    while j >= 0:
        wt = math.exp(_poisson_logpmf(j, mu))
        total += wt * chi_square_sf(x, k + 2 * j)
        if wt < _SERIES_EPS:
            break
        j -= 1
    return min(max(total, 0.0), 1.0)
