"""Command-line interface: ``mofacox {test,factors,simulate,power-curve}``.

Exit codes: 0 success, 1 input error, 2 statistical degeneracy.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import factors as fm
from .errors import MofaCoxError, StageError
from .fads import FadsConfig, run_fads_test
from .io import InputError, ingest
from .simulation import SimConfig, default_threads, run_power_study
from .survival import SurvivalDataset

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 1, 2

PAPER_GRIDS = {
    "sparse": tuple(round(0.05 * i, 2) for i in range(11)),
    "dense": tuple(round(0.02 * i, 2) for i in range(11)),
}


def _lambda_arg(allowed):
    def parse(s):
        if s in allowed:
            return s
        try:
            v = float(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number or one of {allowed}") from None
        if v < 0:
            raise argparse.ArgumentTypeError("must be nonnegative")
        return v
    return parse


def _k_arg(s):
    if s == "ratio":
        return s
    try:
        k = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer or 'ratio'") from None
    if k < 1:
        raise argparse.ArgumentTypeError("k must be positive")
    return k


def _alpha_arg(s):
    a = float(s)
    if not 0 < a < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return a


def _grid_arg(s):
    try:
        return tuple(float(v) for v in s.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def _threads(args):
    t = args.threads if args.threads is not None else default_threads()
    if t < 1:
        raise InputError("--threads must be >= 1")
    return t


def _add_data_args(p):
    p.add_argument("--covariates", required=True, help="covariate CSV with header")
    p.add_argument("--survival", required=True, help="CSV with columns time,status")
    p.add_argument("--groups", required=True, help="CSV with columns column_name,group_id")
    p.add_argument("--break-ties", action="store_true",
                   help="separate tied event times with a 1e-9 jitter")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker count (default: $FADS_THREADS or 1)")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--format", choices=("json", "tsv"), default="json")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_test_args(p):
    p.add_argument("--alpha", type=_alpha_arg, default=0.05)
    p.add_argument("--lambda1", type=_lambda_arg(("cv", "rate")), default="rate")
    p.add_argument("--lambda2", type=_lambda_arg(("rate",)), default="rate")
    p.add_argument("--k", type=_k_arg, default="ratio")
    p.add_argument("--k-bar", type=int, default=fm.DEFAULT_K_BAR)


def build_parser():
    parser = argparse.ArgumentParser(prog="mofacox", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="FADS test of one or more covariate groups")
    _add_data_args(p)
    p.add_argument("--group", action="append", default=None,
                   help="group to test (repeatable; default: every group)")
    p.add_argument("--standardize", action="store_true",
                   help="scale each covariate column to unit variance first")
    _add_test_args(p)
    _add_common(p)

    p = sub.add_parser("factors", help="factor count and summary for a group")
    _add_data_args(p)
    p.add_argument("--group", action="append", default=None)
    p.add_argument("--k", type=_k_arg, default="ratio")
    p.add_argument("--k-bar", type=int, default=fm.DEFAULT_K_BAR)
    p.add_argument("--dump-factors", default=None, help="write factor scores to this CSV")
    _add_common(p)

    for name, hlp in (("simulate", "Monte Carlo size/power at given b0 values"),
                      ("power-curve", "empirical power over the full b0 grid")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--preset", choices=("ci", "paper"), default="ci")
        p.add_argument("--case", type=int, choices=(1, 2, 3), default=1)
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--p", type=int, default=None)
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--alternative", choices=("sparse", "dense"), default="sparse")
        p.add_argument("--b0", type=_grid_arg, default=None,
                       help="comma-separated grid of signal sizes")
        p.add_argument("--censoring", type=float, default=0.40)
        _add_test_args(p)
        _add_common(p)
    return parser


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _fads_config(args):
    return FadsConfig(k=args.k, k_bar=args.k_bar, lambda1=args.lambda1, lambda2=args.lambda2,
                      alphas=(args.alpha,), seed=args.seed)


def _load(args):
    ing = ingest(args.covariates, args.survival, args.groups, tie_breaking=args.break_ties)
    logging.getLogger(__name__).info("ingested %s", ing.report)
    return ing


def _finite_or_none(v):
    return None if v is None or not np.isfinite(v) else float(v)


def cmd_test(args):
    ing = _load(args)
    data = ing.dataset
    if args.standardize:
        x = data.covariates
        sd = x.std(axis=0)
        sd[sd == 0] = 1.0
        data = SurvivalDataset(data.times, data.events, (x - x.mean(axis=0)) / sd, data.groups)
    groups = args.group or data.group_ids
    config = _fads_config(args)
    results = []
    degenerate = False
    for g in groups:
        res = run_fads_test(data, g, config)
        degenerate |= res.degenerate
        d = res.diagnostics
        results.append({
            "group": res.group,
            "k_hat": res.df,
            "statistic": _finite_or_none(res.statistic),
            "df": res.df,
            "p_value": _finite_or_none(res.p_value),
            "reject": res.reject_at.get(args.alpha),
            "lambda1": _finite_or_none(res.lambda1),
            "lambda2": res.lambda2,
            "degenerate": res.degenerate,
            "diagnostics": {
                "kkt_residual": d.get("kkt_residual"),
                "dantzig_feasibility": d.get("dantzig_feasibility"),
                "sigma_min_eig": d.get("sigma_min_eig"),
                "eigen_ratios": d.get("eigen_ratios", [])[:args.k_bar],
                "n_nonzero_beta": d.get("n_nonzero_beta"),
            },
        })
    if args.format == "json":
        text = json.dumps({"schema_version": SCHEMA_VERSION, "alpha": args.alpha,
                           "ingest": ing.report, "results": results}, indent=2)
    else:
        lines = ["group\tk_hat\tstatistic\tdf\tp_value\tlambda1\tlambda2"]
        for r in results:
            lines.append("\t".join(str(r[k]) for k in
                                   ("group", "k_hat", "statistic", "df", "p_value",
                                    "lambda1", "lambda2")))
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return EXIT_DEGENERATE if degenerate else EXIT_OK


def cmd_factors(args):
    ing = _load(args)
    data = ing.dataset
    summaries = []
    dumps = []
    for g in args.group or data.group_ids:
        x = data.group_matrix(g)
        k = fm.estimate_num_factors(x, args.k_bar) if args.k == "ratio" else args.k
        dec = fm.fit_factors(x, k, args.k_bar)
        lam = dec.eigenvalues
        ratios = [float(a / b) if b > 0 else None for a, b in zip(lam[:-1], lam[1:])]
        total = float(np.sum(fm.center_columns(x)[0] ** 2))
        summaries.append({"group": g, "k_hat": int(k), "eigenvalues": lam.tolist(),
                          "eigen_ratios": ratios,
                          "variance_explained": (lam[:k] / total).tolist() if total else []})
        dumps.append((g, dec.factors))
    if args.dump_factors:
        with open(args.dump_factors, "w") as fh:
            cols = [f"{g}_f{j + 1}" for g, f in dumps for j in range(f.shape[1])]
            fh.write(",".join(cols) + "\n")
            mat = np.hstack([f for _, f in dumps])
            for row in mat:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    if args.format == "json":
        text = json.dumps({"schema_version": SCHEMA_VERSION, "groups": summaries}, indent=2)
    else:
        lines = ["group\tk_hat\tvariance_explained"]
        lines += [f"{s['group']}\t{s['k_hat']}\t"
                  + ",".join(f"{v:.6f}" for v in s["variance_explained"]) for s in summaries]
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def _sim_config(args, default_grid):
    grid = args.b0 if args.b0 is not None else default_grid
    if not grid:
        raise InputError("empty b0 grid")
    overrides = {k: v for k, v in (("n", args.n), ("p", args.p),
                                   ("replicates", args.replicates)) if v is not None}
    fads = replace(_fads_config(args), alphas=(args.alpha,))
    return SimConfig.preset(args.preset, case=args.case, alternative=args.alternative,
                            b0_grid=grid, target_censoring=args.censoring, alpha=args.alpha,
                            seed=args.seed, threads=_threads(args), fads=fads, **overrides)


def _run_sim(args, default_grid):
    config = _sim_config(args, default_grid)
    report = run_power_study(config)
    if args.out is None:
        _emit(report.to_json() if args.format == "json" else report.to_tsv(), None)
    else:
        base, ext = os.path.splitext(args.out)
        json_path = args.out if args.format == "json" else base + ".json"
        tsv_path = args.out if args.format == "tsv" else base + ".tsv"
        _emit(report.to_json(), json_path)
        _emit(report.to_tsv(), tsv_path)
    print(report.summary_table(), file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args):
    return _run_sim(args, (0.0,))


def cmd_power_curve(args):
    return _run_sim(args, PAPER_GRIDS[args.alternative])


COMMANDS = {"test": cmd_test, "factors": cmd_factors, "simulate": cmd_simulate,
            "power-curve": cmd_power_curve}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InputError, KeyError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        code = EXIT_INPUT if exc.stage in ("factors",) else EXIT_DEGENERATE
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (MofaCoxError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
