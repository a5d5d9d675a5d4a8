"""Compare the compiled kernels with the numpy fallback.

Run ``python benchmarks/bench_kernels.py``. Each row reports the best of
several repeats for the two hot loops and for a full penalised fit.
"""

import argparse
import time

import numpy as np

from mofacox import _backend, _fallback
from mofacox.lasso import fit_lasso_cox, lambda_max
from mofacox.survival import CoxTerms, FeatureAssembly, SurvivalDataset


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def problem(n, q, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, q))
    eta = x[:, :2] @ [1.0, -0.5]
    t = rng.exponential(size=n) / np.exp(eta)
    c = rng.uniform(0, 2, size=n)
    data = SurvivalDataset(np.minimum(t, c), t <= c, x, [("g", (0, q))])
    return data, FeatureAssembly.from_blocks(covariates=x)


def with_backend(impl, fn):
    saved = _backend.riskset_first_moments, _backend.cd_lasso
    _backend.riskset_first_moments, _backend.cd_lasso = impl.riskset_first_moments, impl.cd_lasso
    try:
        return fn()
    finally:
        _backend.riskset_first_moments, _backend.cd_lasso = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="200x300,200x600,500x1000")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    try:
        from mofacox import _kernels
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e .` first")

    print(f"{'n x q':>10} {'kernel':>10} {'cython s':>10} {'python s':>10} {'speedup':>8}")
    for size in args.sizes.split(","):
        n, q = (int(v) for v in size.split("x"))
        data, feats = problem(n, q)
        terms = CoxTerms(data.index, np.zeros(n))
        idx = data.index
        xs = np.ascontiguousarray(feats.matrix[idx.order])
        ws = terms.w_sorted
        rows = []
        rows.append(("moments",
                     best_of(lambda: _kernels.riskset_first_moments(ws, xs, idx.first_event),
                             args.repeats),
                     best_of(lambda: _fallback.riskset_first_moments(ws, xs, idx.first_event),
                             args.repeats)))
        x = np.asfortranarray(feats.matrix)
        means = np.asfortranarray(terms.riskset_means(x))
        g = terms.gradient(x)
        lam = np.full(q, 0.2 * np.max(np.abs(g)))

        def cd(mod):
            return lambda: mod.cd_lasso(x, terms.c, means, 1.0 / n, g, np.zeros(q),
                                        np.zeros(q), lam, 1e-10, 1000)
        rows.append(("cd_lasso", best_of(cd(_kernels), args.repeats),
                     best_of(cd(_fallback), args.repeats)))
        lam1 = 0.2 * lambda_max(data, feats)

        def fit():
            return fit_lasso_cox(data, feats, lambda1=lam1)
        rows.append(("full fit", with_backend(_kernels, lambda: best_of(fit, args.repeats)),
                     with_backend(_fallback, lambda: best_of(fit, args.repeats))))
        for name, fast, slow in rows:
            print(f"{size:>10} {name:>10} {fast:10.4f} {slow:10.4f} {slow / fast:8.1f}")


if __name__ == "__main__":
    main()
