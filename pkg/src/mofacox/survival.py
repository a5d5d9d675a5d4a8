"""Right-censored survival data and the Cox negative log partial likelihood.

All likelihood quantities use the ``1/n`` normalisation and the risk
indicator ``Y_i(t) = 1{Y_i >= t}``; only distinct event times contribute.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator

from . import _backend
from .errors import LinearPredictorOverflow, NoEventsError, TiedEventTimesError

ETA_LIMIT = 500.0
DENSE_HESSIAN_LIMIT = 4000

FACTOR = "factor"
COVARIATE = "covariate"


def _readonly(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class RiskSetIndex:
    """Sort order and tie bookkeeping for a set of (time, event) pairs.

    Ties among censored times, or between a censored time and an event
    time, are handled exactly; tied *event* times fall back to the
    Breslow convention. :class:`SurvivalDataset` rejects the latter.
    """

    def __init__(self, times, events):
        times = np.asarray(times, dtype=np.float64)
        events = np.asarray(events, dtype=bool)
        self.n = times.shape[0]
        self.order = np.argsort(times, kind="stable")
        ts = times[self.order]
        self.sorted_times = ts
        self.first = np.searchsorted(ts, ts, side="left")
        self.last = np.searchsorted(ts, ts, side="right") - 1
        ev_sorted = events[self.order]
        self.event_pos = np.flatnonzero(ev_sorted)
        self.event_subjects = self.order[self.event_pos]
        self.event_times = ts[self.event_pos]
        self.first_event = np.ascontiguousarray(self.first[self.event_pos], dtype=np.intp)
        self.n_events = self.event_pos.shape[0]


class CoxTerms:
    """Weights of the partial likelihood at one linear predictor.

    ``s0`` holds the risk-set sums at event times scaled by
    ``exp(-shift)``; ``c[i]`` is the subject's total weight in the
    curvature, so that the Hessian equals ``X' diag(c) X - M'M/n`` with
    ``M`` the risk-set mean of each column at each event time.
    """

    def __init__(self, index, eta):
        eta = np.asarray(eta, dtype=np.float64)
        if eta.shape != (index.n,):
            raise ValueError(f"linear predictor has shape {eta.shape}, expected ({index.n},)")
        if not np.all(np.isfinite(eta)):
            raise LinearPredictorOverflow("linear predictor contains non-finite values")
        big = np.max(np.abs(eta))
        if big > ETA_LIMIT:
            raise LinearPredictorOverflow(
                f"|linear predictor| reaches {big:.4g} > {ETA_LIMIT:g}")
        if index.n_events == 0:
            raise NoEventsError("no events")
        n = index.n
        self.index = index
        eta_s = eta[index.order]
        self.shift = float(eta_s.max())
        w = np.exp(eta_s - self.shift)
        self.w_sorted = w
        rev = np.cumsum(w[::-1])[::-1]
        self.s0 = rev[index.first_event]
        a = np.zeros(n)
        a[index.event_pos] = 1.0 / (n * self.s0)
        acc = np.cumsum(a)
        c_sorted = w * acc[index.last]
        self.c = np.empty(n)
        self.c[index.order] = c_sorted
        self.loss = (-eta[index.event_subjects].sum()
                     + np.sum(np.log(self.s0) + self.shift - np.log(n))) / n

    def event_sum(self, x):
        return x[self.index.event_subjects].sum(axis=0)

    def gradient(self, x):
        n = self.index.n
        return -self.event_sum(x) / n + x.T @ self.c

    def riskset_means(self, x):
        """Risk-set weighted mean of each column at each event time (D x q)."""
        idx = self.index
        xs = np.ascontiguousarray(x[idx.order], dtype=np.float64)
        s1 = _backend.riskset_first_moments(self.w_sorted, xs, idx.first_event)
        return s1 / self.s0[:, None]

    def hessian(self, x, rows=None, cols=None, means=None):
        n = self.index.n
        m = self.riskset_means(x) if means is None else means
        xr = x if rows is None else x[:, rows]
        xc = x if cols is None else x[:, cols]
        mr = m if rows is None else m[:, rows]
        mc = m if cols is None else m[:, cols]
        return (xr * self.c[:, None]).T @ xc - (mr.T @ mc) / n


@dataclass(frozen=True)
class SurvivalDataset:
    """Observed times, event indicators and a grouped covariate matrix.

    ``groups`` is a sequence of ``(group_id, (start, stop))`` pairs whose
    column ranges must tile ``[0, p)`` in order.
    """

    times: np.ndarray
    events: np.ndarray
    covariates: np.ndarray
    groups: tuple
    index: RiskSetIndex = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        times = _readonly(self.times)
        events = np.asarray(self.events)
        if events.dtype != bool:
            if not np.all(np.isin(events, (0, 1))):
                raise ValueError("events must be boolean or 0/1")
        events = _readonly(events, dtype=bool)
        x = _readonly(self.covariates)
        if times.ndim != 1:
            raise ValueError("times must be one-dimensional")
        n = times.shape[0]
        if x.ndim != 2 or x.shape[0] != n or events.shape != (n,):
            raise ValueError(
                f"inconsistent sizes: times {times.shape}, events {events.shape}, "
                f"covariates {x.shape}")
        if not np.all(np.isfinite(times)) or np.any(times <= 0):
            raise ValueError("times must be strictly positive and finite")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates contain non-finite values")
        groups = tuple((str(g), (int(a), int(b))) for g, (a, b) in self.groups)
        pos = 0
        seen = set()
        for gid, (a, b) in groups:
            if gid in seen:
                raise ValueError(f"duplicate group id {gid!r}")
            seen.add(gid)
            if a != pos or b <= a:
                raise ValueError(f"group {gid!r} range ({a}, {b}) is not contiguous "
                                 f"from column {pos}")
            pos = b
        if pos != x.shape[1]:
            raise ValueError(f"groups cover {pos} columns but covariates have {x.shape[1]}")
        ev_times = times[events]
        uniq, counts = np.unique(ev_times, return_counts=True)
        if np.any(counts > 1):
            t = uniq[np.argmax(counts > 1)]
            rows = np.flatnonzero(events & (times == t))
            raise TiedEventTimesError(
                f"tied event time {t!r} at rows {rows.tolist()}; "
                "break ties first (see mofacox.survival.break_ties)", rows)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "index", RiskSetIndex(times, events))

    @property
    def n(self):
        return self.times.shape[0]

    @property
    def p(self):
        return self.covariates.shape[1]

    @property
    def n_events(self):
        return int(self.events.sum())

    @property
    def group_ids(self):
        return [g for g, _ in self.groups]

    def group_range(self, group_id):
        for gid, rng in self.groups:
            if gid == str(group_id):
                return rng
        raise KeyError(f"unknown group {group_id!r}")

    def group_matrix(self, group_id):
        a, b = self.group_range(group_id)
        return self.covariates[:, a:b]

    def nuisance_matrix(self, group_id):
        """All columns outside ``group_id``, in their original order."""
        a, b = self.group_range(group_id)
        return np.hstack([self.covariates[:, :a], self.covariates[:, b:]])

    def subset(self, rows):
        rows = np.asarray(rows)
        return SurvivalDataset(self.times[rows], self.events[rows],
                               self.covariates[rows], self.groups)


@dataclass(frozen=True)
class FeatureAssembly:
    """Columns entering the linear predictor, tagged factor or covariate."""

    matrix: np.ndarray
    labels: tuple

    def __post_init__(self):
        x = _readonly(self.matrix)
        if x.ndim != 2 or x.shape[1] < 1:
            raise ValueError("feature matrix must be 2-d with at least one column")
        labels = tuple(self.labels)
        if len(labels) != x.shape[1]:
            raise ValueError("one label per column required")
        bad = set(labels) - {FACTOR, COVARIATE}
        if bad:
            raise ValueError(f"unknown labels {sorted(bad)}")
        object.__setattr__(self, "matrix", x)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_blocks(cls, factors=None, covariates=None):
        """Stack factor columns first, then covariate columns."""
        blocks, labels = [], []
        if factors is not None and np.size(factors):
            factors = np.atleast_2d(np.asarray(factors, dtype=np.float64).T).T
            blocks.append(factors)
            labels += [FACTOR] * factors.shape[1]
        if covariates is not None and np.size(covariates):
            covariates = np.atleast_2d(np.asarray(covariates, dtype=np.float64).T).T
            blocks.append(covariates)
            labels += [COVARIATE] * covariates.shape[1]
        if not blocks:
            raise ValueError("no columns given")
        return cls(np.hstack(blocks), labels)

    @property
    def q(self):
        return self.matrix.shape[1]

    @property
    def factor_columns(self):
        return np.array([i for i, l in enumerate(self.labels) if l == FACTOR], dtype=int)

    @property
    def covariate_columns(self):
        return np.array([i for i, l in enumerate(self.labels) if l == COVARIATE], dtype=int)


@dataclass(frozen=True)
class RiskSetAggregates:
    event_times: np.ndarray
    phi0: np.ndarray
    phi1: np.ndarray = None
    phi2: np.ndarray = None


def _check(data, features, coefs, offset):
    x = features.matrix
    if x.shape[0] != data.n:
        raise ValueError(f"features have {x.shape[0]} rows, dataset has {data.n}")
    coefs = np.asarray(coefs, dtype=np.float64)
    if coefs.shape != (x.shape[1],):
        raise ValueError(f"coefs has shape {coefs.shape}, expected ({x.shape[1]},)")
    eta = x @ coefs
    if offset is not None:
        eta = eta + np.asarray(offset, dtype=np.float64)
    return x, eta


def cox_terms(data, features, coefs, offset=None):
    x, eta = _check(data, features, coefs, offset)
    return x, CoxTerms(data.index, eta)


def riskset_aggregates(data, features, coefs, order=2, block=None, offset=None):
    """Empirical risk-set moments at each distinct event time.

    ``phi_k(t) = (1/n) sum_i 1{Y_i >= t} exp(eta_i) x_i^{(x)k}``.
    ``block=(rows, cols)`` restricts ``phi2`` to a sub-block.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    x, terms = cox_terms(data, features, coefs, offset)
    idx = data.index
    n = data.n
    scale = np.exp(terms.shift) / n
    phi0 = terms.s0 * scale
    phi1 = phi2 = None
    if order >= 1:
        xs = np.ascontiguousarray(x[idx.order])
        phi1 = _backend.riskset_first_moments(terms.w_sorted, xs, idx.first_event) * scale
    if order == 2:
        xs = x[idx.order]
        rows, cols = (slice(None), slice(None)) if block is None else block
        xr, xc = xs[:, rows], xs[:, cols]
        outer = terms.w_sorted[:, None, None] * xr[:, :, None] * xc[:, None, :]
        rev = np.cumsum(outer[::-1], axis=0)[::-1]
        phi2 = rev[idx.first_event] * scale
    return RiskSetAggregates(idx.event_times.copy(), phi0, phi1, phi2)


def neg_log_partial_likelihood(data, features, coefs, offset=None):
    """``-(1/n) sum_i int eta_i dN_i + (1/n) int log Phi0 dNbar``."""
    _, terms = cox_terms(data, features, coefs, offset)
    return float(terms.loss)


def score(data, features, coefs, offset=None):
    """Gradient of :func:`neg_log_partial_likelihood` in ``coefs``."""
    x, terms = cox_terms(data, features, coefs, offset)
    return terms.gradient(x)


def hessian_block(data, features, coefs, rows=None, cols=None, offset=None):
    """A (rows x cols) block of the Hessian of the negative log partial likelihood."""
    x, terms = cox_terms(data, features, coefs, offset)
    rows = None if rows is None else np.asarray(rows, dtype=int)
    cols = None if cols is None else np.asarray(cols, dtype=int)
    for sel in (rows, cols):
        if sel is not None and sel.size and (sel.min() < 0 or sel.max() >= x.shape[1]):
            raise IndexError("column index out of range")
    nr = x.shape[1] if rows is None else rows.size
    nc = x.shape[1] if cols is None else cols.size
    if nr * nc > DENSE_HESSIAN_LIMIT ** 2:
        raise MemoryError("dense block too large; use hessian_operator")
    return terms.hessian(x, rows, cols)


def hessian_operator(data, features, coefs, offset=None):
    """Matrix-free Hessian as a :class:`scipy.sparse.linalg.LinearOperator`.

    Each product costs O(n q); no q x q matrix is formed.
    """
    x, terms = cox_terms(data, features, coefs, offset)
    idx = data.index
    n = data.n
    q = x.shape[1]
    xs = x[idx.order]

    def matvec(v):
        v = np.ravel(v)
        xv = xs @ v
        # risk-set mean of x'v at each event time
        mv = np.cumsum((terms.w_sorted * xv)[::-1])[::-1][idx.first_event] / terms.s0
        # M' mv = sum_k w_k x_k * sum_{d: first_d <= k} mv_d / s0_d
        acc = np.zeros(n)
        np.add.at(acc, idx.first_event, mv / terms.s0)
        back = xs.T @ (terms.w_sorted * np.cumsum(acc))
        c_sorted = terms.c[idx.order]
        return xs.T @ (c_sorted * xv) - back / n

    return LinearOperator((q, q), matvec=matvec, rmatvec=matvec, dtype=np.float64)


def break_ties(times, events, step=1e-9):
    """Separate tied event times by adding ``step * rank`` within each tie."""
    times = np.array(times, dtype=np.float64, copy=True)
    events = np.asarray(events, dtype=bool)
    ev = np.flatnonzero(events)
    order = ev[np.argsort(times[ev], kind="stable")]
    t = times[order]
    start = np.searchsorted(t, t, side="left")
    rank = np.arange(t.size) - start
    times[order] = t + step * rank
    return times
