import math

import numpy as np
import pytest
from scipy.stats import chi2, ncx2

from mofacox.distributions import chi_square_isf, chi_square_sf, chi_square_sf_nc
from mofacox.errors import DegenerateInformationError, InfeasibleProjectionError, StageError
from mofacox.fads import (FadsConfig, decorrelated_score, estimate_projection,
                          fads_from_factors, information_estimate, inverse_sqrt_psd,
                          rate_lambda2, run_fads_test)
from mofacox.survival import FeatureAssembly, SurvivalDataset, hessian_block, score

from conftest import brute_force_cox
from oracles import lp_oracle


class TestProjection:
    def test_one_dimensional_shrinkage(self):
        proj = estimate_projection(np.eye(5), np.array([0.8, 0, 0, 0, 0]), 0.1)
        np.testing.assert_allclose(proj.w[:, 0], [0.7, 0, 0, 0, 0], atol=1e-9)

    def test_zero_when_feasible(self):
        proj = estimate_projection(np.eye(3), np.array([[0.05], [-0.1], [0.02]]), 0.1)
        assert np.all(proj.w == 0)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_lp_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(6, 12))
        h_bb = a @ a.T / 12
        h_bg = rng.normal(size=(6, 2)) * 0.5
        proj = estimate_projection(h_bb, h_bg, 0.05)
        for k in range(2):
            primal, dual = lp_oracle(h_bb, h_bg[:, k], 0.05)
            assert abs(primal - dual) < 1e-7
            assert abs(proj.l1_norms[k] - primal) <= 1e-6
            resid = np.max(np.abs(h_bg[:, k] - h_bb @ proj.w[:, k]))
            assert resid <= 0.05 + 1e-9
            assert proj.feasibility[k] == pytest.approx(resid, abs=1e-10)

    def test_infeasible_reports_residual(self):
        # singular h_bb cannot reach directions outside its range
        h_bb = np.diag([1.0, 0.0])
        with pytest.raises(InfeasibleProjectionError) as err:
            estimate_projection(h_bb, np.array([0.0, 1.0]), 0.1)
        assert err.value.best_residual == pytest.approx(1.0, abs=1e-7)

    def test_rate_lambda2(self):
        n, pm, pr = 200, 300, 300
        expected = 0.5 * (math.sqrt(math.log(pm) * math.log(n) / n)
                          + math.sqrt(math.log(n) / pm) + 1) * math.sqrt(math.log(pr) / n)
        assert rate_lambda2(n, pm, pr) == pytest.approx(expected, rel=1e-14)


class TestInverseSqrt:
    def test_identity(self):
        np.testing.assert_allclose(inverse_sqrt_psd(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(inverse_sqrt_psd(np.diag([4.0, 9.0])),
                                   np.diag([0.5, 1 / 3]), atol=1e-15)

    def test_self_consistency(self, rng):
        a = rng.normal(size=(3, 3))
        a = a @ a.T + 0.1 * np.eye(3)
        r = inverse_sqrt_psd(a)
        np.testing.assert_allclose(r @ a @ r, np.eye(3), atol=1e-10)

    def test_singular(self):
        with pytest.raises(DegenerateInformationError):
            inverse_sqrt_psd(np.diag([1.0, 0.0]))


class TestChiSquare:
    def test_closed_form_k2(self):
        x = np.linspace(0, 50, 2001)
        np.testing.assert_allclose(chi_square_sf(x, 2), np.exp(-x / 2), rtol=1e-12, atol=1e-300)
        assert chi_square_sf(2.0, 2) == pytest.approx(math.exp(-1), abs=1e-15)
        assert chi_square_sf(0.0, 5) == 1.0

    def test_critical_value(self):
        assert abs(chi_square_sf(5.99146, 2) - 0.05) < 1e-5
        # closed-form inverse for k = 2
        assert chi_square_isf(0.05, 2) == pytest.approx(-2 * math.log(0.05), rel=1e-12)

    @pytest.mark.parametrize("k", [1, 3, 7])
    def test_against_reference(self, k):
        x = np.linspace(0.1, 30, 50)
        np.testing.assert_allclose(chi_square_sf(x, k), chi2.sf(x, k), rtol=1e-10)

    @pytest.mark.parametrize("k,h", [(2, 0.5), (2, 5.0), (3, 10.0), (1, 60.0)])
    def test_noncentral(self, k, h):
        for x in (0.5, 5.99, 20.0):
            assert chi_square_sf_nc(x, k, h) == pytest.approx(ncx2.sf(x, k, h), abs=1e-10)

    def test_noncentral_monte_carlo(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=(200000, 2)) + [math.sqrt(3.0), 1.0]
        emp = np.mean((z ** 2).sum(1) > 5.99)
        assert abs(emp - chi_square_sf_nc(5.99, 2, 4.0)) < 4 * math.sqrt(0.25 / 200000)

    def test_reduces_to_central(self):
        assert chi_square_sf_nc(3.0, 2, 0.0) == chi_square_sf(3.0, 2)

    def test_pvalue_monotone(self):
        p = chi_square_sf(np.linspace(0, 40, 400), 3)
        assert np.all(np.diff(p) <= 0)


def small_problem(rng, n=60, p_rest=8, k=2):
    times = rng.exponential(size=n) + 1e-3
    events = rng.random(n) < 0.7
    events[0] = True
    f = rng.normal(size=(n, k))
    x_rest = rng.normal(size=(n, p_rest)) + 0.3 * f[:, :1]
    data = SurvivalDataset(times, events, np.hstack([f, x_rest]),
                           [("m", (0, k)), ("rest", (k, k + p_rest))])
    return data, f, x_rest


class TestScore:
    def test_brute_force_n3(self):
        times = np.array([1.0, 2.0, 3.0])
        events = np.array([True, True, False])
        f = np.array([[0.5], [-1.0], [2.0]])
        x = np.array([[1.0], [0.0], [-0.5]])
        beta, w = np.array([0.4]), np.array([[0.3]])
        data = SurvivalDataset(times, events, np.hstack([f, x]), [("m", (0, 1)), ("r", (1, 2))])
        xi = f - x @ w
        e = np.exp(x @ beta)
        expect = 0.0
        for i in (0, 1):
            risk = times >= times[i]
            expect -= xi[i, 0] - np.sum(e[risk] * xi[risk, 0]) / np.sum(e[risk])
        got = decorrelated_score(data, x, beta, f, w)
        assert got[0] == pytest.approx(expect / 3, abs=1e-12)

    def test_zero_projection_is_factor_score(self, rng):
        data, f, x = small_problem(rng)
        beta = rng.normal(size=8) * 0.1
        s = decorrelated_score(data, x, beta, f, np.zeros((8, 2)))
        full = score(data, FeatureAssembly.from_blocks(factors=f, covariates=x),
                     np.concatenate([[0, 0], beta]))
        np.testing.assert_allclose(s, full[:2], atol=1e-15)

    def test_constant_xi(self, rng):
        data, f, x = small_problem(rng)
        s = decorrelated_score(data, x, np.zeros(8), np.ones((60, 1)), np.zeros((8, 1)))
        assert abs(s[0]) < 1e-15

    def test_information_with_zero_w(self, rng):
        data, f, x = small_problem(rng)
        beta, gamma = rng.normal(size=8) * 0.1, np.array([0.2, -0.1])
        got = information_estimate(data, x, beta, gamma, f, np.zeros((8, 2)))
        _, _, hess = brute_force_cox(data.times, data.events, np.hstack([f, x]),
                                     np.concatenate([gamma, beta]))
        np.testing.assert_allclose(got, hess[:2, :2], rtol=1e-10)
        assert np.linalg.eigvalsh(got)[0] > 0


class TestPipeline:
    def test_sign_flip_invariance(self, rng):
        data, f, x = small_problem(rng, n=80, p_rest=10)
        cfg = FadsConfig(lambda1=0.02, lambda2=0.05)
        a = fads_from_factors(data, x, f, cfg)
        flipped = f * [1, -1]
        b = fads_from_factors(data, x, flipped, cfg)
        assert a.statistic == pytest.approx(b.statistic, abs=1e-10)
        np.testing.assert_allclose(a.score * [1, -1], b.score, atol=1e-12)

    def test_result_invariants(self, rng):
        data, f, x = small_problem(rng, n=80, p_rest=10)
        res = fads_from_factors(data, x, f, FadsConfig(lambda1=0.02, lambda2=0.05))
        assert res.statistic == pytest.approx(float(res.t_n @ res.t_n), abs=1e-12)
        assert res.p_value == chi_square_sf(res.statistic, res.df)
        assert np.all(np.asarray(res.diagnostics["dantzig_feasibility"]) <= 0.05 + 1e-7)
        assert res.reject_at[0.05] == (res.p_value <= 0.05)

    def test_zero_score_degenerate(self, rng):
        data, _, x = small_problem(rng)
        res = fads_from_factors(data, x, np.ones((60, 1)), FadsConfig(lambda2=0.05),
                                beta_fixed=np.zeros(8), gamma_fixed=np.zeros(1))
        assert res.degenerate and res.statistic == 0.0 and res.p_value == 1.0

    def test_duplicated_factor_degenerate(self, rng):
        data, f, x = small_problem(rng)
        dup = np.column_stack([f[:, 0], f[:, 0]])
        res = fads_from_factors(data, x, dup, FadsConfig(lambda1=0.05, lambda2=0.05))
        assert res.degenerate and res.t_n is None
        assert res.diagnostics["sigma_min_eig"] < 1e-10

    def test_run_end_to_end(self, rng):
        n = 80
        f = rng.normal(size=(n, 1))
        xm = f @ rng.uniform(-1, 1, size=(1, 20)) + 0.3 * rng.normal(size=(n, 20))
        xr = rng.normal(size=(n, 15))
        data = SurvivalDataset(rng.exponential(size=n), rng.random(n) < 0.7,
                               np.hstack([xm, xr]), [("m", (0, 20)), ("r", (20, 35))])
        res = run_fads_test(data, "m", FadsConfig(k_bar=5))
        assert res.diagnostics["k_hat"] == res.df == 1
        assert 0 <= res.p_value <= 1

    def test_preconditions(self, rng):
        data, f, x = small_problem(rng, n=15)
        with pytest.raises(ValueError):
            run_fads_test(data, "m")

    def test_stage_tagged(self, rng):
        data, f, x = small_problem(rng)
        with pytest.raises(StageError, match=r"\[lambda1\]"):
            fads_from_factors(data, x, f, FadsConfig(lambda1="bogus"))
