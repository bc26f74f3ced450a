"""``sonic`` command line.

Exit codes: 0 success, 1 domain error, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from importlib import metadata

import numpy as np

from . import bench, io as sio
from .errors import SingularGram, SonicError
from .estimator import FitOptions, fit
from .experiment import SCHEMA, ExperimentConfig, run_experiment, write_outputs
from .io import FormatError
from .moments import estimate_moments
from .selection import lambda_heuristic, stability_analysis
from .simulate import RNG_ALGORITHM, SimulationConfig, simulate

logger = logging.getLogger("sonic")

EXIT_DOMAIN = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _threads(args) -> int:
    env = os.environ.get("SONIC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"SONIC_THREADS must be an integer, got {env!r}") from None
    if getattr(args, "threads", None):
        return args.threads
    return os.cpu_count() or 1


def _lambda_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        lam = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a float or 'auto', got {text!r}") from None
    if lam < 0:
        raise argparse.ArgumentTypeError("lambda must be nonnegative")
    return lam


def _probability(text: str):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad probability list {text!r}") from None
    return vals[0] if len(vals) == 1 else tuple(vals)


def _read_panel(path, zeros_are_missing=False):
    try:
        return sio.read_panel_csv(path, zeros_are_missing=zeros_are_missing)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except FormatError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _fit_options(args, threads: int) -> FitOptions:
    return FitOptions(
        max_outer=args.max_outer,
        moves_per_update=args.moves_per_update,
        restarts=args.restarts,
        seed=args.seed,
        psd_project=False if getattr(args, "no_psd_project", False) else None,
        threads=threads,
    )


def _write_json(obj, path):
    if path in (None, "-"):
        sys.stdout.write(json.dumps(obj, indent=2) + "\n")
        return
    try:
        sio.dump_json(obj, path)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror or exc}") from exc


def cmd_simulate(args) -> int:
    cfg = SimulationConfig(n=args.n, k=args.k, s=args.s, coef=args.coef, t=args.t, p=args.p,
                           trunc_order=args.trunc_order, seed=args.seed)
    sim = simulate(cfg)
    try:
        sio.write_panel_csv(sim.panel, args.out)
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc.strerror or exc}") from exc
    if args.truth_out:
        _write_json(sio.truth_to_dict(sim.truth, cfg.to_dict(), RNG_ALGORITHM), args.truth_out)
    print(f"N={sim.panel.N} T={sim.panel.T} observed_fraction={sim.panel.observed_fraction():.4f}")
    return 0


def cmd_estimate(args) -> int:
    panel = _read_panel(args.input, args.zeros_are_missing)
    opts = _fit_options(args, _threads(args))
    mom = estimate_moments(panel, psd=opts.psd_project)
    lam = lambda_heuristic(mom.sigma_hat, args.k, mom.t, mom.p_hat) if args.lam == "auto" else args.lam
    model = fit(mom, args.k, lam, opts)
    provenance = {
        "tool": "sonic",
        "tool_version": _version(),
        "seed": args.seed,
        "lambda_policy": "auto" if args.lam == "auto" else "fixed",
        "psd_projected": mom.psd_projected,
        "config": {
            "input": os.path.basename(args.input), "k": args.k, "lambda": args.lam,
            "restarts": args.restarts, "max_outer": args.max_outer,
            "moves_per_update": args.moves_per_update, "no_psd_project": args.no_psd_project,
            "zeros_are_missing": args.zeros_are_missing,
        },
    }
    _write_json(sio.model_to_dict(model, panel.node_ids, provenance), args.out)
    if args.out not in (None, "-"):
        print(f"K={model.k} lambda={model.lam:.6g} risk={model.risk:.6g} iterations={model.iterations}")
    return 0


def cmd_stability(args) -> int:
    panel = _read_panel(args.input, args.zeros_are_missing)
    policy = args.lambda_policy
    if policy != "heuristic":
        try:
            policy = float(policy)
        except ValueError:
            raise UsageError(f"--lambda-policy must be 'heuristic' or a float, got {policy!r}") from None
    threads = _threads(args)
    report = stability_analysis(panel, args.k_min, args.k_max, policy, _fit_options(args, threads))
    try:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["K", "window_j", "distance"])
            w.writerows(report.rows())
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc.strerror or exc}") from exc
    print(f"recommended_k={report.recommended_k if report.recommended_k is not None else 'none'}")
    return 0


def benchmark_rows(panel, k, lam, frac, opts) -> tuple[list[dict], float]:
    """Prediction errors on the test part for SONIC and the three baselines."""
    train, test = bench.train_test_split(panel, frac)
    mom = estimate_moments(train, psd=opts.psd_project)
    test_mom = estimate_moments(test, psd=False)
    if lam == "auto":
        lam = lambda_heuristic(mom.sigma_hat, k, mom.t, mom.p_hat)

    def score(theta):
        return bench.prediction_error(theta, test_mom.sigma_hat, test_mom.a_hat)

    rows = []
    model = fit(mom, k, lam, opts)
    rows.append({"method": "SONIC", "prediction_error": score(model.theta)})
    cond = bench.gram_condition(mom.sigma_hat)
    try:
        rows.append({"method": "VAR", "prediction_error": score(bench.fit_var_baseline(mom.sigma_hat, mom.a_hat)),
                     "gram_condition": cond})
    except SingularGram as exc:
        rows.append({"method": "VAR", "prediction_error": None, "gram_condition": cond, "error": str(exc)})
    sparse = bench.fit_sparse_var_baseline(mom.sigma_hat, mom.a_hat, lam, opts.lasso_opts)
    rows.append({"method": "Sparse VAR", "prediction_error": score(sparse), "gram_condition": cond})
    rows.append({"method": "Theta=0", "prediction_error": score(np.zeros_like(mom.sigma_hat))})
    return rows, lam


def cmd_benchmark(args) -> int:
    panel = _read_panel(args.input, args.zeros_are_missing)
    opts = _fit_options(args, _threads(args))
    rows, lam = benchmark_rows(panel, args.k, args.lam, args.split, opts)
    out = {"split": args.split, "k": args.k, "lambda": lam, "seed": args.seed, "rows": rows}
    _write_json(out, args.out)
    return 0


def cmd_experiment(args) -> int:
    if args.print_schema:
        sys.stdout.write(SCHEMA)
        return 0
    if not args.config:
        raise UsageError("experiment needs a config file (or --print-schema)")
    try:
        cfg = ExperimentConfig.load(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read {args.config}: {exc.strerror or exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{args.config}: {exc}") from exc
    out_dir = args.out or cfg.output_dir
    records = run_experiment(cfg, threads=_threads(args))
    paths = write_outputs(cfg, records, out_dir)
    failed = sum(1 for r in records if r.error)
    print(f"wrote {len(paths)} files to {out_dir} ({len(records)} fits, {failed} failed)")
    return 0


def cmd_eval(args) -> int:
    try:
        model = sio.model_from_dict(sio.load_json(args.model))
        truth = sio.truth_from_dict(sio.load_json(args.truth))
    except OSError as exc:
        raise UsageError(f"cannot read input: {exc.strerror or exc}") from exc
    except (FormatError, KeyError) as exc:
        raise UsageError(str(exc)) from exc
    ev = bench.align_and_score(model, truth)
    _write_json({
        "relative_frobenius": ev.relative_frobenius,
        "clustering_distance": ev.clustering_distance,
        "support_exact": ev.support_exact,
        "aligned_permutation": list(ev.aligned_permutation),
    }, args.out)
    return 0


def _add_fit_flags(p, restarts=5):
    p.add_argument("--restarts", type=int, default=restarts)
    p.add_argument("--max-outer", type=int, default=100)
    p.add_argument("--moves-per-update", type=int, default=None,
                   help="label moves per V update (default: N, one full sweep)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--no-psd-project", action="store_true")
    p.add_argument("--zeros-are-missing", action="store_true",
                   help="treat literal zeros in the input as unobserved")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sonic", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=_version())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a planted SONIC panel")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--s", type=int, default=1)
    p.add_argument("--coef", type=float, default=0.5)
    p.add_argument("--t", type=int, default=100)
    p.add_argument("--p", type=_probability, default=1.0, help="scalar or comma-separated per-node list")
    p.add_argument("--trunc-order", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit a SONIC model")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=_lambda_arg, default="auto")
    p.add_argument("--out", default="-")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("stability", help="stability of clusterings across time windows")
    p.add_argument("--input", required=True)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=6)
    p.add_argument("--lambda-policy", default="heuristic")
    p.add_argument("--out", required=True)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("benchmark", help="prediction error against VAR baselines")
    p.add_argument("--input", required=True)
    p.add_argument("--split", type=float, default=0.7)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=_lambda_arg, default="auto")
    p.add_argument("--out", default="-")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("experiment", help="run a simulation-study grid")
    p.add_argument("config", nargs="?")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--print-schema", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("eval", help="score a model against a truth file")
    p.add_argument("--model", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sonic: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SonicError, ValueError) as exc:
        print(f"sonic: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
