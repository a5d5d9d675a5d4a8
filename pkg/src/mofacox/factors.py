"""Principal-component estimation of latent factors within one covariate group.

Columns are centred before any decomposition. The eigen-problem is solved
on the n x n Gram matrix, which is the cheap side when p_m >> n.
"""

import warnings
from dataclasses import dataclass

import numpy as np

DEFAULT_K_BAR = 15
_ZERO_EIG = 1e-12
_DEGENERATE_GAP = 1e-10


@dataclass(frozen=True)
class FactorDecomposition:
    """Estimated factors ``F`` (n x k), loadings ``B`` (p_m x k) and residuals ``U``.

    ``F @ B.T + U`` reproduces the column-centred input; ``center`` holds
    the removed column means.
    """

    k: int
    factors: np.ndarray
    loadings: np.ndarray
    idiosyncratic: np.ndarray
    eigenvalues: np.ndarray
    center: np.ndarray
    warnings: tuple = ()

    @property
    def variance_explained(self):
        total = float(np.sum(self.idiosyncratic ** 2) + np.sum(self.eigenvalues[: self.k]))
        return self.eigenvalues[: self.k] / total if total > 0 else np.zeros(self.k)


def center_columns(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    mean = x.mean(axis=0)
    return x - mean, mean


def gram_eigenvalues(x, centered=False):
    """Eigenvalues of ``X X'`` in descending order (negative rounding clipped)."""
    xc = np.asarray(x, dtype=np.float64) if centered else center_columns(x)[0]
    vals = np.linalg.eigvalsh(xc @ xc.T)[::-1]
    return np.clip(vals, 0.0, None)


def ratio_estimate(eigenvalues, k_bar):
    """Ratio-method factor count from a descending eigenvalue profile.

    Returns the ``k <= k_bar`` maximising ``lam_k / lam_{k+1}``; a
    numerically zero ``lam_{k+1}`` makes that ratio infinite.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if k_bar < 1:
        raise ValueError("k_bar must be positive")
    if lam.size < k_bar + 1:
        raise ValueError(f"need {k_bar + 1} eigenvalues, got {lam.size}")
    if lam[0] <= 0:
        raise ValueError("all eigenvalues are zero")
    floor = _ZERO_EIG * lam[0]
    best_k, best = 1, -np.inf
    for k in range(1, k_bar + 1):
        denom = lam[k]
        if denom < floor:
            return k
        r = lam[k - 1] / denom
        if r > best:
            best_k, best = k, r
    return best_k


def estimate_num_factors(x, k_bar=DEFAULT_K_BAR):
    """Number of factors in ``x`` (n x p_m) by the eigenvalue-ratio method.

    ``k_bar`` larger than ``min(n, p_m) - 1`` is reduced to that bound with
    a warning.
    """
    xc, _ = center_columns(x)
    n, p = xc.shape
    limit = min(n, p) - 1
    if limit < 1:
        raise ValueError(f"matrix {xc.shape} too small to estimate factors")
    if k_bar > limit:
        warnings.warn(f"k_bar={k_bar} reduced to {limit} for a {n}x{p} matrix",
                      stacklevel=2)
        k_bar = limit
    return ratio_estimate(gram_eigenvalues(xc, centered=True), k_bar)


def fit_factors(x, k, k_bar=DEFAULT_K_BAR):
    xc, mean = center_columns(x)
    n, p = xc.shape
    if not 1 <= k < min(n, p):
        raise ValueError(f"k={k} must satisfy 1 <= k < min(n, p_m) = {min(n, p)}")
    vals, vecs = np.linalg.eigh(xc @ xc.T)
    vals, vecs = np.clip(vals[::-1], 0.0, None), vecs[:, ::-1]
    notes = []
    top = vals[: k + 1]
    for j in range(k):
        scale = max(top[j], np.finfo(float).tiny)
        if (top[j] - top[j + 1]) / scale < _DEGENERATE_GAP and j + 1 < k:
            notes.append(f"eigenvalues {j + 1} and {j + 2} coincide; factors are "
                         "identified only up to rotation")
    factors = np.sqrt(n) * vecs[:, :k]
    loadings = xc.T @ factors / n
    # sign convention: largest-magnitude loading of each factor is positive
    lead = np.argmax(np.abs(loadings), axis=0)
    signs = np.sign(loadings[lead, np.arange(k)])
    signs[signs == 0] = 1.0
    factors = factors * signs
    loadings = loadings * signs
    idio = xc - factors @ loadings.T
    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    n_keep = min(max(k_bar, k) + 1, vals.size)
    return FactorDecomposition(k, factors, loadings, idio, vals[:n_keep].copy(), mean,
                               tuple(notes))


def sample_covariance(x):
    """``X'X / n`` after centring each column."""
    xc, _ = center_columns(x)
    if xc.shape[0] < 2:
        raise ValueError("need at least two rows")
    s = xc.T @ xc / xc.shape[0]
    return (s + s.T) / 2
