"""Monte Carlo size and power studies for the FADS test.

Two covariate groups of equal size ``p/2``; the first group is tested.

* case 1: ``X_m = F_m B_m' + U_m`` with two N(0, I) factors, U(-1, 1)
  loadings and AR(0.5) idiosyncratic rows;
* case 2: AR(0.5) Gaussian rows in each group;
* case 3: ``x1 = P' x2 + eps`` with ``x2, eps`` AR(0.5) and ``P`` tying the
  first and last five coordinates of ``x1`` to the last ten of ``x2``.

Survival times are exponential with rate ``exp(eta)``; censoring is
U(0, c) with ``c`` calibrated to the target censoring fraction.
"""

import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .distributions import chi_square_isf, chi_square_sf_nc
from .errors import MofaCoxError
from .fads import FadsConfig, fads_from_factors, run_fads_test
from .survival import CoxTerms, SurvivalDataset

log = logging.getLogger(__name__)

AR_RHO = 0.5
CASE3_D1, CASE3_D2, CASE3_Q = 5, 10, 0.5
MAX_FAILURE_RATE = 0.05

PRESETS = {
    "ci": dict(n=150, p=300, replicates=200),
    "paper": dict(n=200, p=600, replicates=500),
}


@dataclass(frozen=True)
class SimConfig:
    case: int = 1
    n: int = 150
    p: int = 300
    k_true: int = 2
    beta2_signal: float = 1.0
    alternative: str = "sparse"
    b0_grid: tuple = (0.0,)
    target_censoring: float = 0.40
    replicates: int = 200
    alpha: float = 0.05
    seed: int = 0
    threads: int = 1
    calibration_size: int = 20000
    n_sparse: int = 5
    fads: FadsConfig = field(default_factory=FadsConfig)

    def __post_init__(self):
        if self.case not in (1, 2, 3):
            raise ValueError("case must be 1, 2 or 3")
        if self.p % 2 or self.p < 4:
            raise ValueError("p must be even and at least 4")
        if self.case == 3 and self.p // 2 < max(2 * CASE3_D1, CASE3_D2):
            raise ValueError("case 3 needs p/2 >= 10")
        grid = tuple(float(b) for b in self.b0_grid)
        if not grid:
            raise ValueError("b0_grid is empty")
        if any(b < 0 for b in grid) or any(b > a for a, b in zip(grid[1:], grid)):
            raise ValueError("b0_grid must be nonnegative and ascending")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.alternative not in ("sparse", "dense"):
            raise ValueError("alternative must be 'sparse' or 'dense'")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        object.__setattr__(self, "b0_grid", grid)

    @classmethod
    def preset(cls, name, **overrides):
        return cls(**{**PRESETS[name], **overrides})

    @property
    def p1(self):
        return self.p // 2

    @property
    def p2(self):
        return self.p - self.p // 2


@dataclass(frozen=True)
class PowerRow:
    b0: float
    rejection_rate: float
    mc_std_error: float
    n_valid: int
    n_failed: int
    c_max: float
    censoring_rate: float
    p_values: tuple = field(repr=False, default=())


@dataclass(frozen=True)
class SimReport:
    rows: tuple
    censoring_rate_observed: float
    config: dict
    invalid: bool = False
    runtime: float = field(default=0.0, compare=False)

    def to_dict(self, include_p_values=False):
        rows = []
        for r in self.rows:
            d = asdict(r)
            if not include_p_values:
                d.pop("p_values")
            rows.append(d)
        return {"schema_version": 1, "rows": rows,
                "censoring_rate_observed": self.censoring_rate_observed,
                "invalid": self.invalid, "runtime": self.runtime, "config": self.config}

    def to_json(self, include_p_values=False):
        return json.dumps(self.to_dict(include_p_values), indent=2, default=_jsonable)

    def to_tsv(self):
        lines = ["b0\trejection_rate\tmc_se"]
        lines += [f"{r.b0:g}\t{r.rejection_rate:.6f}\t{r.mc_std_error:.6f}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def summary_table(self):
        head = f"{'b0':>8} {'reject':>8} {'mc_se':>8} {'valid':>6} {'failed':>6} {'cens':>6}"
        out = [head, "-" * len(head)]
        for r in self.rows:
            out.append(f"{r.b0:8.3f} {r.rejection_rate:8.3f} {r.mc_std_error:8.3f} "
                       f"{r.n_valid:6d} {r.n_failed:6d} {r.censoring_rate:6.3f}")
        return "\n".join(out)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def ar1_rows(rng, n, p, rho=AR_RHO):
    """Rows ~ N(0, (rho^|i-j|)) by the recursion ``x_j = rho x_{j-1} + sqrt(1-rho^2) e_j``."""
    e = rng.standard_normal((n, p))
    s = math.sqrt(1.0 - rho * rho)
    e[:, 0] /= s  # stationary start
    return lfilter([s], [1.0, -rho], e, axis=1)


def case3_projection(p1, p2, d1=CASE3_D1, d2=CASE3_D2, value=CASE3_Q):
    """``P`` (p2 x p1): zeros except the last ``d2`` rows, which hold ``[Q', 0, Q']``."""
    if p1 < 2 * d1 or p2 < d2:
        raise ValueError("groups too small for the case-3 projection")
    p = np.zeros((p2, p1))
    qt = np.full((d2, d1), value)
    p[p2 - d2:, :d1] = qt
    p[p2 - d2:, p1 - d1:] = qt
    return p


def generate_covariates(config, rng, noise_scale=1.0):
    """Draw ``(x1, x2, truth)`` for the configured case.

    ``noise_scale=0`` removes the idiosyncratic part in case 1 and ``eps``
    in case 3 (used to check the exact structure).
    """
    n, p1, p2 = config.n, config.p1, config.p2
    truth = {}
    if config.case == 1:
        xs = []
        for m, pm in ((1, p1), (2, p2)):
            f = rng.standard_normal((n, config.k_true))
            b = rng.uniform(-1.0, 1.0, size=(pm, config.k_true))
            u = ar1_rows(rng, n, pm)
            xs.append(f @ b.T + noise_scale * u)
            truth[f"factors{m}"] = f
            truth[f"loadings{m}"] = b
        x1, x2 = xs
    elif config.case == 2:
        x1 = ar1_rows(rng, n, p1)
        x2 = ar1_rows(rng, n, p2)
    else:
        x2 = ar1_rows(rng, n, p2)
        eps = ar1_rows(rng, n, p1)
        proj = case3_projection(p1, p2)
        x1 = x2 @ proj + noise_scale * eps
        truth["projection"] = proj
    return x1, x2, truth


def coefficients(config, b0):
    beta1 = np.zeros(config.p1)
    if config.alternative == "sparse":
        beta1[: config.n_sparse] = b0
    else:
        beta1[:] = b0
    beta2 = np.zeros(config.p2)
    beta2[:2] = config.beta2_signal
    return beta1, beta2


def simulate_survival(eta, c_max, rng):
    """Exponential(rate exp(eta)) event times, U(0, c_max) censoring.

    Coinciding event times (possible only through rounding) are redrawn.
    """
    eta = np.asarray(eta, dtype=np.float64)
    n = eta.size
    rate = np.exp(eta)
    t = -np.log(rng.random(n)) / rate
    c = rng.uniform(0.0, c_max, size=n) if np.isfinite(c_max) else np.full(n, np.inf)
    for _ in range(100):
        ev = t <= c
        _, inv, counts = np.unique(t[ev], return_inverse=True, return_counts=True)
        dup = np.flatnonzero(ev)[counts[inv] > 1]
        if dup.size == 0:
            break
        t[dup] = -np.log(rng.random(dup.size)) / rate[dup]
    return np.minimum(t, c), t <= c


def _design_eta_sample(config, b0, rng, size):
    beta1, beta2 = coefficients(config, b0)
    out = []
    total = 0
    while total < size:
        x1, x2, _ = generate_covariates(config, rng)
        out.append(x1 @ beta1 + x2 @ beta2)
        total += config.n
    return np.concatenate(out)[:size]


def censoring_rate(eta, c_max):
    """Expected censoring fraction under U(0, c_max) censoring, given ``eta``."""
    # P(C < T | eta) = E[min(T, c) / c] = (1 - exp(-rate c)) / (rate c)
    z = np.exp(eta) * c_max
    return float(np.mean(-np.expm1(-z) / z))


def calibrate_censoring(config, rng, mc_size=None, b0=0.0, lower=1e-3, upper=1e3):
    """Censoring bound ``c`` giving the target censoring fraction (bisection on log c)."""
    mc_size = config.calibration_size if mc_size is None else mc_size
    if mc_size < 10_000:
        raise ValueError("mc_size must be at least 10^4")
    target = config.target_censoring
    eta = _design_eta_sample(config, b0, rng, mc_size)
    if target <= 0:
        warnings.warn("target censoring 0: returning the upper bracket", stacklevel=2)
        return upper
    lo_rate, hi_rate = censoring_rate(eta, lower), censoring_rate(eta, upper)
    if not hi_rate <= target <= lo_rate:
        raise MofaCoxError(f"target censoring {target} unreachable for c in "
                           f"[{lower}, {upper}] (rates {hi_rate:.3f}..{lo_rate:.3f})")
    a, b = math.log(lower), math.log(upper)
    for _ in range(200):
        mid = 0.5 * (a + b)
        r = censoring_rate(eta, math.exp(mid))
        if abs(r - target) < 1e-4:
            break
        if r > target:
            a = mid
        else:
            b = mid
    return math.exp(mid)


def replicate_rng(seed, replicate):
    """Independent stream for one replicate, shared across the b0 grid."""
    return np.random.default_rng([int(seed), int(replicate)])


def _calibration_rng(seed, index):
    return np.random.default_rng([int(seed), 2**31 - 1, int(index)])


def simulate_dataset(config, b0, c_max, rng):
    x1, x2, truth = generate_covariates(config, rng)
    beta1, beta2 = coefficients(config, b0)
    times, events = simulate_survival(x1 @ beta1 + x2 @ beta2, c_max, rng)
    data = SurvivalDataset(times, events, np.hstack([x1, x2]),
                           [("1", (0, config.p1)), ("2", (config.p1, config.p))])
    return data, truth


def _run_replicate(args):
    config, b0, c_max, rep = args
    rng = replicate_rng(config.seed, rep)
    data, _ = simulate_dataset(config, b0, c_max, rng)
    cens = 1.0 - data.n_events / data.n
    try:
        res = run_fads_test(data, "1", config.fads)
    except (MofaCoxError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return rep, None, cens, repr(exc)
    if res.degenerate or not np.isfinite(res.p_value):
        return rep, None, cens, "degenerate information estimate"
    return rep, float(res.p_value), cens, None


def _map(fn, tasks, threads):
    if threads <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


_CALIBRATION_CACHE = {}


def cached_calibration(config, b0, index):
    key = (config.case, config.n, config.p, config.k_true, config.beta2_signal,
           config.alternative, config.n_sparse, float(b0), config.target_censoring,
           config.seed, config.calibration_size)
    if key not in _CALIBRATION_CACHE:
        _CALIBRATION_CACHE[key] = calibrate_censoring(config, _calibration_rng(config.seed, index),
                                                      b0=b0)
    return _CALIBRATION_CACHE[key]


def run_power_study(config, progress=None):
    """Rejection rate of the FADS test at each ``b0`` of the grid."""
    start = time.perf_counter()
    rows = []
    cens_all = []
    invalid = False
    crit_alpha = config.alpha
    for gi, b0 in enumerate(config.b0_grid):
        c_max = cached_calibration(config, b0, gi)
        tasks = [(config, b0, c_max, r) for r in range(config.replicates)]
        results = sorted(_map(_run_replicate, tasks, config.threads), key=lambda r: r[0])
        pvals = [pv for _, pv, _, _ in results if pv is not None]
        failed = len(results) - len(pvals)
        cens = float(np.mean([c for _, _, c, _ in results]))
        cens_all.append(cens)
        if failed > MAX_FAILURE_RATE * len(results):
            invalid = True
        n_valid = len(pvals)
        rate = float(np.mean(np.asarray(pvals) <= crit_alpha)) if n_valid else float("nan")
        se = math.sqrt(rate * (1 - rate) / n_valid) if n_valid else float("nan")
        rows.append(PowerRow(b0, rate, se, n_valid, failed, c_max, cens, tuple(pvals)))
        if progress is not None:
            progress(rows[-1])
    echo = asdict(config)
    return SimReport(tuple(rows), float(np.mean(cens_all)), echo, invalid,
                     time.perf_counter() - start)


def theoretical_power(c_mn, sigma_star, n, alpha=0.05):
    """Local power ``P{chi2(k, h) > chi2_k(alpha)}`` with ``h = n c' Sigma* c``."""
    c = np.atleast_1d(np.asarray(c_mn, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma_star, dtype=np.float64))
    if sigma.shape != (c.size, c.size):
        raise ValueError("sigma_star must be k x k")
    if np.linalg.eigvalsh((sigma + sigma.T) / 2)[0] <= 0:
        raise ValueError("sigma_star must be positive definite")
    k = c.size
    crit = chi_square_isf(alpha, k)
    h = float(n * c @ sigma @ c)
    if h == 0:
        return float(alpha)
    return chi_square_sf_nc(crit, k, h)


# -- oracle experiments: true factors and true nuisance coefficients ---------

def oracle_dataset(config, gamma, c_max, rng):
    """Case-1 style data whose hazard is ``x2 beta2 + f1 gamma`` exactly."""
    x1, x2, truth = generate_covariates(replace(config, case=1), rng)
    _, beta2 = coefficients(config, 0.0)
    f1 = truth["factors1"]
    times, events = simulate_survival(x2 @ beta2 + f1 @ np.asarray(gamma, float), c_max, rng)
    data = SurvivalDataset(times, events, np.hstack([x1, x2]),
                           [("1", (0, config.p1)), ("2", (config.p1, config.p))])
    return data, x2, f1, beta2


def oracle_calibration(config, gamma, rng, mc_size=None):
    mc_size = config.calibration_size if mc_size is None else mc_size
    etas = []
    total = 0
    cfg1 = replace(config, case=1)
    _, beta2 = coefficients(config, 0.0)
    while total < mc_size:
        _, x2, truth = generate_covariates(cfg1, rng)
        etas.append(x2 @ beta2 + truth["factors1"] @ np.asarray(gamma, float))
        total += config.n
    eta = np.concatenate(etas)[:mc_size]
    a, b = math.log(1e-3), math.log(1e3)
    for _ in range(200):
        mid = 0.5 * (a + b)
        r = censoring_rate(eta, math.exp(mid))
        if abs(r - config.target_censoring) < 1e-4:
            break
        a, b = (mid, b) if r > config.target_censoring else (a, mid)
    return math.exp(mid)


def oracle_information(config, gamma, c_max, rng, n_big=20000):
    """Large-sample estimate of the conditional information at the truth.

    Uses ``H_gg - H_gb H_bb^{-1} H_bg`` on one sample of ``n_big`` subjects
    at the true coefficients.
    """
    big = replace(config, n=n_big)
    data, x2, f1, beta2 = oracle_dataset(big, gamma, c_max, rng)
    x = np.hstack([f1, x2])
    coefs = np.concatenate([np.asarray(gamma, float), beta2])
    terms = CoxTerms(data.index, x @ coefs)
    h = terms.hessian(x)
    k = f1.shape[1]
    h_gg, h_gb, h_bb = h[:k, :k], h[:k, k:], h[k:, k:]
    sigma = h_gg - h_gb @ np.linalg.solve(h_bb, h_gb.T)
    return (sigma + sigma.T) / 2


def _oracle_replicate(args):
    config, gamma, c_max, rep = args
    rng = replicate_rng(config.seed, rep)
    data, x2, f1, beta2 = oracle_dataset(config, gamma, c_max, rng)
    try:
        res = fads_from_factors(data, x2, f1, config.fads, group="1", p_m=config.p1,
                                beta_fixed=beta2)
    except (MofaCoxError, ValueError, ArithmeticError) as exc:
        return rep, None, None, repr(exc)
    if res.degenerate:
        return rep, None, None, "degenerate"
    return rep, res.t_n.tolist(), res.statistic, None


def oracle_statistics(config, gamma=None, c_max=None):
    """``T_n`` vectors and ``||T_n||^2`` over replicates with oracle factors and beta."""
    gamma = np.zeros(config.k_true) if gamma is None else np.asarray(gamma, float)
    if c_max is None:
        c_max = oracle_calibration(config, gamma, _calibration_rng(config.seed, 999))
    tasks = [(config, gamma, c_max, r) for r in range(config.replicates)]
    out = sorted(_map(_oracle_replicate, tasks, config.threads), key=lambda r: r[0])
    t = np.array([o[1] for o in out if o[1] is not None])
    stats = np.array([o[2] for o in out if o[2] is not None])
    failures = sum(1 for o in out if o[1] is None)
    return t, stats, failures


def default_threads():
    env = os.environ.get("FADS_THREADS")
    return max(1, int(env)) if env else 1
