"""LASSO-penalised Cox regression by proximal Newton, plus lambda cross-validation.

The objective is ``l(coefs) + lambda1 * sum_j w_j |coefs_j|`` where ``l`` is
the negative log partial likelihood; columns with ``w_j = 0`` (the factor
columns by default) are left unpenalised.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import LinearPredictorOverflow, NoEventsError
from .survival import CoxTerms, FeatureAssembly, FACTOR, SurvivalDataset

log = logging.getLogger(__name__)

ARMIJO = 1e-4
MAX_HALVINGS = 40


@dataclass(frozen=True)
class PenalizedFit:
    coefs: np.ndarray
    labels: tuple
    lambda1: float
    penalty_weights: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    objective_path: tuple = field(default=(), repr=False)

    @property
    def gamma_m(self):
        """Coefficients of the factor-labelled columns."""
        return self.coefs[[i for i, l in enumerate(self.labels) if l == FACTOR]]

    @property
    def beta_minus_m(self):
        """Coefficients of the covariate-labelled columns."""
        return self.coefs[[i for i, l in enumerate(self.labels) if l != FACTOR]]

    @property
    def n_nonzero_penalized(self):
        return int(np.count_nonzero(self.coefs[self.penalty_weights > 0]))


@dataclass(frozen=True)
class CvReport:
    lambda_path: np.ndarray
    cv_deviance: np.ndarray
    selected_lambda: float
    fold_count: int
    fold_deviance: np.ndarray = field(repr=False, default=None)
    skipped_folds: tuple = ()


def default_penalty_weights(features):
    return np.array([0.0 if l == FACTOR else 1.0 for l in features.labels])


def rate_lambda1(n, p_m, p_rest, c=0.5):
    """Rate-based ``lambda1 = c * C_{n, p_m, p - p_m}``."""
    return c * (math.sqrt(math.log(p_m) * math.log(n) / n)
                + math.sqrt(math.log(n) / p_m)
                + math.sqrt(math.log(n * p_rest)) * math.sqrt(math.log(p_rest) / n))


def kkt_residual(grad, coefs, lam):
    """Largest violation of the lasso optimality conditions."""
    zero = coefs == 0
    viol = np.where(zero,
                    np.maximum(np.abs(grad) - lam, 0.0),
                    np.abs(grad + lam * np.sign(coefs)))
    return float(viol.max()) if viol.size else 0.0


def penalized_objective(data, features, coefs, lambda1, penalty_weights, offset=None):
    eta = features.matrix @ coefs
    if offset is not None:
        eta = eta + offset
    terms = CoxTerms(data.index, eta)
    return float(terms.loss + lambda1 * np.sum(penalty_weights * np.abs(coefs)))


class _Problem:
    def __init__(self, data, features, lam, offset):
        self.index = data.index
        self.x = features.matrix
        self.xf = np.asfortranarray(self.x)
        self.lam = lam
        self.offset = offset

    def terms(self, coefs):
        eta = self.x @ coefs
        if self.offset is not None:
            eta = eta + self.offset
        return CoxTerms(self.index, eta)

    def objective(self, coefs, terms=None):
        if terms is None:
            try:
                terms = self.terms(coefs)
            except LinearPredictorOverflow:
                return math.inf
        return float(terms.loss + np.sum(self.lam * np.abs(coefs)))


def fit_lasso_cox(data, features, penalty_weights=None, lambda1=0.0, tol=1e-8,
                  max_iter=100, init=None, offset=None, max_sweeps=2000):
    """Minimise the penalised negative log partial likelihood.

    Parameters
    ----------
    data : SurvivalDataset
    features : FeatureAssembly
        Regressors; rows must match ``data``.
    penalty_weights : array, optional
        Per-column weights; defaults to 0 on factor columns, 1 elsewhere.
    lambda1 : float
        Overall penalty level.
    tol : float
        Target KKT residual.
    init : array, optional
        Warm start.
    offset : array, optional
        Fixed addition to the linear predictor.

    Returns
    -------
    PenalizedFit
        ``converged`` is False when ``max_iter`` outer steps did not reach
        ``tol``; the best iterate is returned regardless.
    """
    if lambda1 < 0:
        raise ValueError("lambda1 must be nonnegative")
    if data.n_events == 0:
        raise NoEventsError("no events")
    q = features.q
    if penalty_weights is None:
        penalty_weights = default_penalty_weights(features)
    penalty_weights = np.asarray(penalty_weights, dtype=np.float64)
    if penalty_weights.shape != (q,) or np.any(penalty_weights < 0):
        raise ValueError("penalty_weights must be a nonnegative vector of length q")
    lam = lambda1 * penalty_weights
    prob = _Problem(data, features, lam, None if offset is None else np.asarray(offset, float))
    n = data.n

    coefs = np.zeros(q) if init is None else np.array(init, dtype=np.float64)
    terms = prob.terms(coefs)
    obj = prob.objective(coefs, terms)
    grad = terms.gradient(prob.x)
    kkt = kkt_residual(grad, coefs, lam)
    path = [obj]
    converged = kkt <= tol
    it = 0
    while not converged and it < max_iter:
        it += 1
        means = np.asfortranarray(terms.riskset_means(prob.x))
        v = coefs.copy()
        inner_tol = max(0.05 * kkt, 0.1 * tol)
        _backend.cd_lasso(prob.xf, terms.c, means, 1.0 / n, grad, coefs, v, lam,
                          inner_tol, max_sweeps)
        step = v - coefs
        decrease = float(grad @ step + np.sum(lam * (np.abs(v) - np.abs(coefs))))
        if not np.any(step) or decrease >= 0:
            log.debug("no descent direction at iteration %d (kkt %.3g)", it, kkt)
            break
        t = 1.0
        for _ in range(MAX_HALVINGS):
            trial = coefs + t * step
            trial_obj = prob.objective(trial)
            if trial_obj <= obj + ARMIJO * t * decrease:
                break
            t *= 0.5
        else:
            log.debug("line search failed at iteration %d", it)
            break
        coefs = trial
        terms = prob.terms(coefs)
        obj = prob.objective(coefs, terms)
        grad = terms.gradient(prob.x)
        kkt = kkt_residual(grad, coefs, lam)
        path.append(obj)
        converged = kkt <= tol
    coefs.setflags(write=False)
    return PenalizedFit(coefs, features.labels, float(lambda1), penalty_weights, obj, kkt,
                        it, bool(converged), tuple(path))


def lambda_max(data, features, penalty_weights=None, tol=1e-10):
    """Smallest ``lambda1`` at which every penalised coefficient is zero."""
    if penalty_weights is None:
        penalty_weights = default_penalty_weights(features)
    penalty_weights = np.asarray(penalty_weights, dtype=np.float64)
    free = penalty_weights == 0
    coefs = np.zeros(features.q)
    if np.any(free):
        sub = FeatureAssembly(features.matrix[:, free],
                              [l for l, f in zip(features.labels, free) if f])
        fit = fit_lasso_cox(data, sub, np.zeros(int(free.sum())), 0.0, tol=tol)
        coefs[free] = fit.coefs
    grad = CoxTerms(data.index, features.matrix @ coefs).gradient(features.matrix)
    pen = ~free
    if not np.any(pen):
        return 0.0
    return float(np.max(np.abs(grad[pen]) / penalty_weights[pen]))


def lambda_path(lam_max, path_length, ratio=0.01):
    if path_length < 1:
        raise ValueError("path_length must be >= 1")
    if path_length == 1:
        return np.array([lam_max])
    return lam_max * np.geomspace(1.0, ratio, path_length)


def fit_path(data, features, lambdas, penalty_weights=None, tol=1e-8, max_iter=100):
    """Warm-started fits along a descending sequence of ``lambda1`` values."""
    fits = []
    init = None
    for lam in lambdas:
        fit = fit_lasso_cox(data, features, penalty_weights, lam, tol=tol,
                            max_iter=max_iter, init=init)
        fits.append(fit)
        init = fit.coefs
    return fits


def _subset(data, features, rows):
    sub = SurvivalDataset(data.times[rows], data.events[rows], data.covariates[rows],
                          data.groups)
    return sub, FeatureAssembly(features.matrix[rows], features.labels)


def cross_validate_lambda1(data, features, penalty_weights=None, folds=5, path_length=20,
                           seed=0, fold_ids=None, tol=1e-7):
    """K-fold cross-validation of ``lambda1`` by held-out partial likelihood.

    The deviance of a fold is the negative log partial likelihood of the
    held-out subjects (their own risk sets) at the training-fold
    coefficients. ``fold_ids`` overrides the seeded random assignment.
    """
    n = data.n
    if fold_ids is None:
        if not 2 <= folds <= n:
            raise ValueError("folds must lie in [2, n]")
        rng = np.random.default_rng(seed)
        fold_ids = rng.permutation(np.arange(n) % folds)
    else:
        fold_ids = np.asarray(fold_ids)
        folds = int(fold_ids.max()) + 1
    if penalty_weights is None:
        penalty_weights = default_penalty_weights(features)
    lam_max = lambda_max(data, features, penalty_weights)
    lambdas = lambda_path(lam_max, path_length)
    dev = np.full((folds, lambdas.size), np.nan)
    skipped = []
    for k in range(folds):
        test = fold_ids == k
        train = ~test
        if not data.events[test].any() or not data.events[train].any():
            warnings.warn(f"fold {k} skipped: no events in one side of the split",
                          stacklevel=2)
            skipped.append(k)
            continue
        tr_data, tr_feat = _subset(data, features, np.flatnonzero(train))
        te_data, te_feat = _subset(data, features, np.flatnonzero(test))
        fits = fit_path(tr_data, tr_feat, lambdas, penalty_weights, tol=tol)
        for j, fit in enumerate(fits):
            dev[k, j] = CoxTerms(te_data.index, te_feat.matrix @ fit.coefs).loss
    used = [k for k in range(folds) if k not in skipped]
    if not used:
        raise NoEventsError("every fold was skipped")
    mean = dev[used].mean(axis=0)
    best = int(np.argmin(mean))
    return CvReport(lambdas, mean, float(lambdas[best]), folds, dev, tuple(skipped))
