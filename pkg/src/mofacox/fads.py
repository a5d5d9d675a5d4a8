"""Factor-adjusted decorrelated score (FADS) test for one covariate group.

Pipeline for a target group ``m``:

1. estimate the factor count and the factors ``F`` of ``X_m``;
2. fit the Cox-LASSO on ``(F, X_{-m})`` with the factor coefficients
   unpenalised;
3. at that fit, solve one Dantzig-type program per factor for the
   projection ``W`` of the factor/nuisance Hessian block;
4. form ``xi = F - X_{-m} W`` and its score with risk weights
   ``exp(X_{-m} beta)`` (factor coefficients set to zero);
5. standardise by the plug-in conditional information and compare
   ``||T_n||^2`` with a chi-squared law on ``k`` degrees of freedom.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import factors as fm
from .distributions import chi_square_isf, chi_square_sf
from .errors import (DegenerateInformationError, InfeasibleProjectionError, MofaCoxError,
                     StageError)
from .lasso import (cross_validate_lambda1, default_penalty_weights, fit_lasso_cox,
                    rate_lambda1)
from .survival import CoxTerms, FeatureAssembly

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProjectionMatrix:
    w: np.ndarray
    lambda2: float
    feasibility: np.ndarray
    l1_norms: np.ndarray


@dataclass(frozen=True)
class FadsConfig:
    """Tuning of :func:`run_fads_test`.

    ``k`` is an integer or ``"ratio"``; ``lambda1`` a float, ``"rate"`` or
    ``"cv"``; ``lambda2`` a float or ``"rate"``. ``c_lambda1`` and
    ``c_lambda2`` scale the rate-based defaults.
    """

    k: object = "ratio"
    k_bar: int = fm.DEFAULT_K_BAR
    lambda1: object = "rate"
    lambda2: object = "rate"
    c_lambda1: float = 0.5
    c_lambda2: float = 0.5
    alphas: tuple = (0.01, 0.05, 0.1)
    lasso_tol: float = 1e-8
    lasso_max_iter: int = 100
    dantzig_tol: float = 1e-9
    min_eig: float = 1e-10
    cv_folds: int = 5
    cv_path_length: int = 20
    seed: int = 0


@dataclass(frozen=True)
class TestResult:
    group: str
    df: int
    score: np.ndarray
    sigma_hat: np.ndarray
    t_n: np.ndarray
    statistic: float
    p_value: float
    reject_at: dict
    lambda1: float
    lambda2: float
    degenerate: bool = False
    diagnostics: dict = field(default_factory=dict, repr=False)

    __test__ = False  # keep pytest from collecting this class


def rate_lambda2(n, p_m, p_rest, c=0.5):
    """Rate-based ``lambda2 = c * C'_{n, p_m, p - p_m}``."""
    return c * ((math.sqrt(math.log(p_m) * math.log(n) / n)
                 + math.sqrt(math.log(n) / p_m) + 1.0)
                * math.sqrt(math.log(p_rest) / n))


def _solve_dantzig_column(h_bb, h, lambda2, tol):
    p = h.size
    if np.max(np.abs(h)) <= lambda2:
        return np.zeros(p)
    a = np.block([[h_bb, -h_bb], [-h_bb, h_bb]])
    b = np.concatenate([lambda2 + h, lambda2 - h])
    res = linprog(np.ones(2 * p), A_ub=a, b_ub=b, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": min(1e-7, max(tol, 1e-10)),
                           "dual_feasibility_tolerance": 1e-9})
    if res.status != 0:
        raise InfeasibleProjectionError(
            f"Dantzig program not solved at lambda2={lambda2:.4g}: {res.message}",
            _best_residual(h_bb, h))
    return res.x[:p] - res.x[p:]


def _best_residual(h_bb, h):
    # min_w ||h - H w||_inf, the smallest feasible lambda2
    p = h.size
    c = np.zeros(2 * p + 1)
    c[-1] = 1.0
    one = np.ones((p, 1))
    a = np.block([[h_bb, -h_bb, -one], [-h_bb, h_bb, -one]])
    b = np.concatenate([h, -h])
    res = linprog(c, A_ub=a, b_ub=b, bounds=(0, None), method="highs")
    return float(res.x[-1]) if res.status == 0 else float("nan")


def estimate_projection(h_bb, h_bg, lambda2, tol=1e-9):
    """Column-wise ``min ||w||_1`` subject to ``||h_bg[:, k] - h_bb w||_inf <= lambda2``.

    ``h_bb`` may be a dense array or anything exposing ``toarray()``.
    """
    if lambda2 < 0:
        raise ValueError("lambda2 must be nonnegative")
    h_bb = np.asarray(h_bb.toarray() if hasattr(h_bb, "toarray") else h_bb, dtype=np.float64)
    h_bg = np.asarray(h_bg, dtype=np.float64)
    if h_bg.ndim == 1:
        h_bg = h_bg[:, None]
    p, k = h_bg.shape
    if h_bb.shape != (p, p):
        raise ValueError(f"h_bb has shape {h_bb.shape}, expected ({p}, {p})")
    w = np.zeros((p, k))
    for j in range(k):
        w[:, j] = _solve_dantzig_column(h_bb, h_bg[:, j], lambda2, tol)
    # entries below solver precision are rounding
    w[np.abs(w) < 1e-12] = 0.0
    feas = np.max(np.abs(h_bg - h_bb @ w), axis=0) if p else np.zeros(k)
    bad = feas > lambda2 + max(tol, 1e-7)
    if np.any(bad):
        raise InfeasibleProjectionError(
            f"columns {np.flatnonzero(bad).tolist()} violate the constraint by "
            f"{float(np.max(feas - lambda2)):.3g}", float(np.max(feas)))
    return ProjectionMatrix(w, float(lambda2), feas, np.abs(w).sum(axis=0))


def _as_w(w):
    return w.w if isinstance(w, ProjectionMatrix) else np.asarray(w, dtype=np.float64)


def decorrelated_score(data, x_rest, beta_hat, f_hat, w):
    """Score of ``xi = f_hat - x_rest W`` with risk weights ``exp(x_rest beta_hat)``."""
    x_rest = np.asarray(x_rest, dtype=np.float64)
    f_hat = np.atleast_2d(np.asarray(f_hat, dtype=np.float64).T).T
    wmat = _as_w(w)
    if wmat.ndim == 1:
        wmat = wmat[:, None]
    xi = f_hat - x_rest @ wmat if x_rest.shape[1] else f_hat
    eta = x_rest @ np.asarray(beta_hat, dtype=np.float64) if x_rest.shape[1] else np.zeros(data.n)
    terms = CoxTerms(data.index, eta)
    return terms.gradient(xi)


def information_estimate(data, x_rest, beta_hat, gamma_hat, f_hat, w):
    """``H_gg - W' H_bg`` at ``(beta_hat, gamma_hat)``, symmetrised."""
    x_rest = np.asarray(x_rest, dtype=np.float64)
    f_hat = np.atleast_2d(np.asarray(f_hat, dtype=np.float64).T).T
    k = f_hat.shape[1]
    x = np.hstack([f_hat, x_rest])
    coefs = np.concatenate([np.asarray(gamma_hat, float), np.asarray(beta_hat, float)])
    terms = CoxTerms(data.index, x @ coefs)
    means = terms.riskset_means(x)
    fcols = np.arange(k)
    bcols = np.arange(k, x.shape[1])
    h_gg = terms.hessian(x, fcols, fcols, means)
    a = h_gg
    if bcols.size:
        wmat = _as_w(w)
        if wmat.ndim == 1:
            wmat = wmat[:, None]
        a = h_gg - wmat.T @ terms.hessian(x, bcols, fcols, means)
    return (a + a.T) / 2


def inverse_sqrt_psd(a, min_eig=1e-10):
    """Symmetric inverse square root; raises when an eigenvalue is below ``min_eig``."""
    a = np.asarray(a, dtype=np.float64)
    vals, vecs = np.linalg.eigh((a + a.T) / 2)
    if vals[0] < min_eig:
        raise DegenerateInformationError(
            f"smallest eigenvalue {vals[0]:.3g} below {min_eig:g}", float(vals[0]))
    out = (vecs / np.sqrt(vals)) @ vecs.T
    return (out + out.T) / 2


def _choose_lambda1(config, data, features, p_m, p_rest):
    if isinstance(config.lambda1, str):
        if config.lambda1 == "rate":
            return rate_lambda1(data.n, p_m, p_rest, config.c_lambda1)
        if config.lambda1 == "cv":
            rep = cross_validate_lambda1(data, features, folds=config.cv_folds,
                                         path_length=config.cv_path_length, seed=config.seed)
            return rep.selected_lambda
        raise ValueError(f"unknown lambda1 rule {config.lambda1!r}")
    return float(config.lambda1)


def _choose_lambda2(config, n, p_m, p_rest):
    if isinstance(config.lambda2, str):
        if config.lambda2 == "rate":
            return rate_lambda2(n, p_m, p_rest, config.c_lambda2)
        raise ValueError(f"unknown lambda2 rule {config.lambda2!r}")
    return float(config.lambda2)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (MofaCoxError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc


def fads_from_factors(data, x_rest, f_hat, config=FadsConfig(), group="m", p_m=None,
                      beta_fixed=None, gamma_fixed=None, diagnostics=None):
    """Run the test given the factor matrix and the nuisance covariates.

    ``beta_fixed`` replaces the LASSO fit of the nuisance coefficients
    (oracle use); ``gamma_fixed`` likewise for the factor coefficients.
    When only ``beta_fixed`` is given, the factor coefficients are fitted
    with the nuisance part held as an offset.
    """
    x_rest = np.asarray(x_rest, dtype=np.float64)
    f_hat = np.atleast_2d(np.asarray(f_hat, dtype=np.float64).T).T
    n, k = f_hat.shape
    p_rest = x_rest.shape[1]
    p_m = p_m if p_m is not None else k
    diag = dict(diagnostics or {})
    diag.update(n=n, n_events=data.n_events, p_rest=p_rest)

    features = FeatureAssembly.from_blocks(factors=f_hat, covariates=x_rest)
    lambda1 = float("nan")
    if beta_fixed is None:
        lambda1 = _stage("lambda1", _choose_lambda1, config, data, features,
                         max(p_m, 2), max(p_rest, 2))
        fit = _stage("lasso", fit_lasso_cox, data, features,
                     default_penalty_weights(features), lambda1,
                     tol=config.lasso_tol, max_iter=config.lasso_max_iter)
        gamma_hat = np.array(fit.gamma_m)
        beta_hat = np.array(fit.beta_minus_m)
        diag.update(kkt_residual=fit.kkt_residual, lasso_converged=fit.converged,
                    lasso_iterations=fit.iterations,
                    n_nonzero_beta=int(np.count_nonzero(beta_hat)))
    else:
        beta_hat = np.asarray(beta_fixed, dtype=np.float64)
        if gamma_fixed is None:
            fsub = FeatureAssembly.from_blocks(factors=f_hat)
            fit = _stage("lasso", fit_lasso_cox, data, fsub, np.zeros(k), 0.0,
                         tol=config.lasso_tol, offset=x_rest @ beta_hat if p_rest else None)
            gamma_hat = np.array(fit.coefs)
    if gamma_fixed is not None:
        gamma_hat = np.asarray(gamma_fixed, dtype=np.float64)
    diag["gamma_hat"] = gamma_hat.tolist()

    lambda2 = _choose_lambda2(config, n, max(p_m, 2), max(p_rest, 2))
    if p_rest:
        x = features.matrix
        coefs = np.concatenate([gamma_hat, beta_hat])
        terms = _stage("hessian", CoxTerms, data.index, x @ coefs)
        means = terms.riskset_means(x)
        fcols, bcols = np.arange(k), np.arange(k, k + p_rest)
        h_bb = terms.hessian(x, bcols, bcols, means)
        h_bg = terms.hessian(x, bcols, fcols, means)
        proj = _stage("projection", estimate_projection, h_bb, h_bg, lambda2,
                      config.dantzig_tol)
        h_gg = terms.hessian(x, fcols, fcols, means)
        a = h_gg - proj.w.T @ h_bg
        sigma = (a + a.T) / 2
    else:
        proj = ProjectionMatrix(np.zeros((0, k)), lambda2, np.zeros(k), np.zeros(k))
        sigma = _stage("information", information_estimate, data, x_rest, beta_hat,
                       gamma_hat, f_hat, proj)
    diag.update(dantzig_feasibility=proj.feasibility.tolist(),
                dantzig_l1=proj.l1_norms.tolist())

    s = _stage("score", decorrelated_score, data, x_rest, beta_hat, f_hat, proj)
    eigs = np.linalg.eigvalsh(sigma)
    diag["sigma_min_eig"] = float(eigs[0])
    try:
        root = inverse_sqrt_psd(sigma, config.min_eig)
    except DegenerateInformationError:
        zero = not np.any(np.abs(s) > 1e-14)
        # a vanishing score carries no evidence regardless of the scale
        stat = 0.0 if zero else float("nan")
        pval = 1.0 if zero else float("nan")
        return TestResult(str(group), k, s, sigma, None, stat, pval,
                          {a_: False for a_ in config.alphas} if zero else {},
                          lambda1, lambda2, True, diag)
    t_n = math.sqrt(n) * root @ s
    stat = float(t_n @ t_n)
    pval = chi_square_sf(stat, k)
    reject = {a_: bool(stat >= chi_square_isf(a_, k)) for a_ in config.alphas}
    return TestResult(str(group), k, s, sigma, t_n, stat, float(pval), reject, lambda1,
                      lambda2, False, diag)


def run_fads_test(data, target_group, config=FadsConfig()):
    """End-to-end FADS test of ``target_group`` conditional on all other groups."""
    x_m = data.group_matrix(target_group)
    p_m = x_m.shape[1]
    if p_m < 2:
        raise ValueError(f"group {target_group!r} has {p_m} column(s); need at least 2")
    if data.n < 20:
        raise ValueError(f"n={data.n} is below the minimum of 20")
    if config.k == "ratio":
        k = _stage("factors", fm.estimate_num_factors, x_m, config.k_bar)
    else:
        k = int(config.k)
    dec = _stage("factors", fm.fit_factors, x_m, k, config.k_bar)
    lam = dec.eigenvalues
    ratios = (lam[:-1] / np.where(lam[1:] > 0, lam[1:], np.nan)).tolist()
    diag = dict(k_hat=k, eigenvalues=lam.tolist(), eigen_ratios=ratios,
                factor_warnings=list(dec.warnings))
    return fads_from_factors(data, data.nuisance_matrix(target_group), dec.factors, config,
                             group=target_group, p_m=p_m, diagnostics=diag)
