import os
import subprocess
import sys

import numpy as np
import pytest

from mofacox import _backend, _fallback
from mofacox.lasso import fit_lasso_cox, lambda_max
from mofacox.survival import CoxTerms, neg_log_partial_likelihood, score

from conftest import make_instance

kernels = pytest.importorskip("mofacox._kernels", reason="compiled extension not built")


def test_riskset_moments_agree(rng):
    n, q = 200, 7
    w = rng.exponential(size=n)
    x = rng.normal(size=(n, q))
    first = np.sort(rng.choice(n, 40, replace=False)).astype(np.intp)
    np.testing.assert_allclose(kernels.riskset_first_moments(w, x, first),
                               _fallback.riskset_first_moments(w, x, first), rtol=1e-12)


def test_cd_lasso_agrees(rng):
    data, f, _ = make_instance(rng, 120, 60)
    terms = CoxTerms(data.index, np.zeros(120))
    x = np.asfortranarray(f.matrix)
    means = np.asfortranarray(terms.riskset_means(x))
    g = terms.gradient(x)
    lam = np.full(60, 0.3 * np.max(np.abs(g)))
    out = []
    for mod in (kernels, _fallback):
        v = np.zeros(60)
        sweeps = mod.cd_lasso(x, terms.c, means, 1.0 / 120, g, np.zeros(60), v, lam, 1e-12, 500)
        out.append((v, sweeps))
    np.testing.assert_allclose(out[0][0], out[1][0], atol=1e-12)
    assert out[0][1] == out[1][1]


def test_fit_identical_under_fallback(rng, monkeypatch):
    data, f, _ = make_instance(rng, 100, 80)
    lam = 0.2 * lambda_max(data, f)
    fast = fit_lasso_cox(data, f, lambda1=lam)
    monkeypatch.setattr(_backend, "cd_lasso", _fallback.cd_lasso)
    monkeypatch.setattr(_backend, "riskset_first_moments", _fallback.riskset_first_moments)
    slow = fit_lasso_cox(data, f, lambda1=lam)
    np.testing.assert_allclose(fast.coefs, slow.coefs, atol=1e-10)
    assert fast.iterations == slow.iterations
    b = fast.coefs
    assert neg_log_partial_likelihood(data, f, b) == pytest.approx(
        neg_log_partial_likelihood(data, f, b), rel=1e-14)
    np.testing.assert_allclose(score(data, f, b), score(data, f, b))


def test_environment_forces_fallback():
    env = dict(os.environ, MOFACOX_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import mofacox; print(mofacox.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert _backend.BACKEND == "cython"
