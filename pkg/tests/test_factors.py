import warnings

import numpy as np
import pytest

from mofacox.factors import (center_columns, estimate_num_factors, fit_factors,
                             gram_eigenvalues, ratio_estimate, sample_covariance)
from mofacox.simulation import SimConfig, generate_covariates


def test_ratio_profile():
    assert ratio_estimate([10, 5, 0.5, 0.4, 0.3], 4) == 2


def test_ratio_zero_tail_is_infinite():
    assert ratio_estimate([9, 8, 1e-20, 0, 0], 4) == 2


def test_ratio_requires_enough_eigenvalues():
    with pytest.raises(ValueError):
        ratio_estimate([3, 2], 2)


def test_rank_one_example():
    x = np.array([[2.0, 1.0], [-2.0, -1.0]])
    dec = fit_factors(x, 1, k_bar=1)
    np.testing.assert_allclose(dec.factors[:, 0], [1.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(dec.loadings[:, 0], [2.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(dec.idiosyncratic, 0.0, atol=1e-12)


def test_sample_covariance_example():
    np.testing.assert_allclose(sample_covariance([[1.0, 0.0], [-1.0, 0.0]]),
                               [[1.0, 0.0], [0.0, 0.0]])


@pytest.mark.parametrize("seed", range(5))
def test_noiseless_rank_k(seed):
    rng = np.random.default_rng(seed)
    n, p, k = 60, 40, 3
    x = rng.normal(size=(n, k)) @ rng.normal(size=(k, p)) + rng.normal(size=p)
    assert estimate_num_factors(x, k_bar=8) == k
    dec = fit_factors(x, k)
    assert np.max(np.abs(dec.idiosyncratic)) < 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_reconstruction_and_normalisation(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 20)) + 3.0
    dec = fit_factors(x, 4)
    xc, mean = center_columns(x)
    np.testing.assert_allclose(dec.factors @ dec.loadings.T + dec.idiosyncratic, xc,
                               atol=1e-12)
    np.testing.assert_allclose(dec.center, mean)
    np.testing.assert_allclose(dec.factors.T @ dec.factors / 30, np.eye(4), atol=1e-10)
    # loadings equal the direct least-squares projection
    np.testing.assert_allclose(dec.loadings, np.linalg.lstsq(dec.factors, xc, rcond=None)[0].T,
                               atol=1e-10)


def test_scale_invariance(rng):
    x = rng.normal(size=(40, 25))
    k = estimate_num_factors(x, 6)
    assert estimate_num_factors(7.5 * x, 6) == k
    a, b = fit_factors(x, 2), fit_factors(7.5 * x, 2)
    np.testing.assert_allclose(a.factors, b.factors, atol=1e-8)


def test_sign_convention(rng):
    dec = fit_factors(rng.normal(size=(30, 10)), 3)
    lead = np.argmax(np.abs(dec.loadings), axis=0)
    assert np.all(dec.loadings[lead, np.arange(3)] > 0)


def test_k_bar_clamped_with_warning(rng):
    x = rng.normal(size=(5, 30))
    with pytest.warns(UserWarning, match="reduced"):
        k = estimate_num_factors(x, 15)
    assert 1 <= k <= 4


def test_equal_eigenvalues_warn():
    x = np.vstack([np.eye(4) * 2, -np.eye(4) * 2])
    with pytest.warns(UserWarning, match="coincide"):
        fit_factors(x, 2)


def test_invalid_k(rng):
    with pytest.raises(ValueError):
        fit_factors(rng.normal(size=(5, 4)), 4)


def test_gram_eigenvalues_match_covariance(rng):
    x = rng.normal(size=(12, 30))
    lam = gram_eigenvalues(x)
    cov_eigs = np.linalg.eigvalsh(sample_covariance(x) * 12)[::-1][:12]
    np.testing.assert_allclose(lam, cov_eigs, atol=1e-9)


def case1_recovery(seeds):
    cfg = SimConfig(case=1, n=200, p=600, replicates=1)
    hits, corr = 0, []
    for s in seeds:
        x1, _, truth = generate_covariates(cfg, np.random.default_rng(s))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            hits += estimate_num_factors(x1) == 2
            dec = fit_factors(x1, 2)
        f = truth["factors1"]
        # factors are identified up to rotation: best canonical correlations
        q_true, _ = np.linalg.qr(f - f.mean(axis=0))
        q_hat, _ = np.linalg.qr(dec.factors)
        corr.append(np.linalg.svd(q_true.T @ q_hat, compute_uv=False).min())
    return hits, np.array(corr)


def test_case1_pervasive_recovery():
    hits, corr = case1_recovery(range(10))
    assert hits >= 9
    assert np.all(corr >= 0.95)
