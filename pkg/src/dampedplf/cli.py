"""Command-line interface: ``dampedplf run|validate|update``.

Exit codes: 0 success, 1 invalid input or filter error, 2 experiment
finished but too many cells failed (see ``ExperimentReport.within_error_policy``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .config import bundled_config, bundled_config_names, load_config, run_config
from .estimators import ESTIMATORS, ALIASES, make_filter
from .exceptions import ConfigError, FilterError
from .experiments import backend_for, default_jobs
from .filters import DiplfParams
from .gaussian import GaussianState
from .grid import GridSpec, grid_posterior, kld_grid
from .models import arctan_model, linear_model, quadratic_model, range_model

EXIT_OK, EXIT_INVALID, EXIT_CELL_ERRORS = 0, 1, 2
MODEL_CHOICES = ("arctan", "quadratic", "quad", "range", "linear")


def _resolve_config(arg: str) -> Path:
    path = Path(arg)
    if path.exists() or path.suffix in (".yaml", ".yml"):
        return path
    return bundled_config(arg)


def cmd_validate(args) -> int:
    cfg = load_config(_resolve_config(args.config))
    print(f"{cfg.source}: ok ({cfg.experiment}, {len(cfg.algorithms)} algorithms x {len(cfg.backends)} backends)")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(_resolve_config(args.config))
    if args.output_dir:
        cfg.output_dir = Path(args.output_dir)
    report = run_config(cfg, jobs=args.jobs)
    paths = report.write(cfg.output_dir, cfg.stem, cfg.formats, include_traces=cfg.traces)
    if not args.quiet:
        _print_table(report)
        for p in paths:
            print(f"wrote {p}")
    if report.errors:
        print(f"{len(report.errors)} cell evaluation(s) failed", file=sys.stderr)
    return EXIT_OK if report.within_error_policy() else EXIT_CELL_ERRORS


def _print_table(report):
    metric = "kld" if any(r["metric"] == "kld" for r in report.rows) else report.rows[0]["metric"] if report.rows else None
    if metric is None:
        return
    if report.name == "sweep":
        for r in report.rows:
            if r["metric"] == "kld":
                print(f"{r['backend']:>5} tau={r['tau']:<6g} beta={r['beta']:<6g} kld={r['value']:.5e}")
        return
    table = report.table(metric)
    algs = list(dict.fromkeys(a for row in table.values() for a in row))
    print(f"{metric:>8} " + " ".join(f"{a:>12}" for a in algs))
    for backend, cells in table.items():
        print(f"{backend:>8} " + " ".join(f"{cells.get(a, float('nan')):12.5e}" for a in algs))


def _square(values: List[float], n: int, name: str) -> np.ndarray:
    if len(values) == 1:
        return values[0] * np.eye(n)
    if len(values) == n:
        return np.diag(values)
    if len(values) == n * n:
        return np.asarray(values, dtype=float).reshape(n, n)
    raise ValueError(f"{name} needs 1, {n} or {n * n} values, got {len(values)}")


def _build_update_problem(args):
    mean = np.asarray(args.prior_mean, dtype=float)
    n = mean.size
    if args.prior_cov is not None:
        cov = _square(args.prior_cov, n, "--prior-cov")
    else:
        cov = _square(args.prior_var or [1.0], n, "--prior-var")
    prior = GaussianState(mean, cov)
    y = np.asarray(args.y, dtype=float)
    d = y.size
    name = "quadratic" if args.model == "quad" else args.model
    if name in ("arctan", "quadratic"):
        var = (args.r or [1e-4 if name == "arctan" else 4.0])[0]
        model = arctan_model(var) if name == "arctan" else quadratic_model(var)
    elif name == "range":
        beacons = np.asarray(args.beacons, dtype=float).reshape(-1, n) if args.beacons else None
        kw = {"beacons": beacons} if beacons is not None else {}
        d_model = len(beacons) if beacons is not None else 3
        model = range_model(noise_cov=_square(args.r or [1.0], d_model, "--r"), **kw)
    else:
        if args.H is None:
            raise ValueError("--model linear requires --H")
        H = np.asarray(args.H, dtype=float).reshape(d, n)
        model = linear_model(H, args.c, _square(args.r or [1.0], d, "--r"))
    return prior, model, y


def _kalman(prior: GaussianState, model, y) -> GaussianState:
    H = np.asarray(model.params["H"])
    c = np.asarray(model.params["c"])
    S = H @ prior.cov @ H.T + model.noise_cov
    K = np.linalg.solve(S, H @ prior.cov).T
    return GaussianState(prior.mean + K @ (y - H @ prior.mean - c), prior.cov - K @ S @ K.T)


def cmd_update(args) -> int:
    prior, model, y = _build_update_problem(args)
    overrides = {}
    if args.tau is not None:
        overrides["tau"] = args.tau
    if args.beta is not None:
        overrides["beta"] = args.beta
    if args.max_iter is not None:
        overrides["iplf_max_iter"] = args.max_iter
        overrides["max_outer"] = args.max_iter
    params = DiplfParams(**overrides)
    backend = backend_for(args.backend, args.seed, args.mc_samples)
    result = make_filter(args.alg, backend, params, args.ruf_steps).update(prior, model, y)
    post = result.posterior
    out = {
        "mean": post.mean.tolist(),
        "cov": post.cov.tolist(),
        "iterations": result.n_iter,
        "diverged": result.trace.diverged,
    }
    if args.oracle:
        out["kld_vs_oracle"] = kld_grid(grid_posterior(prior, model, y, GridSpec.around(prior)), post)
    if model.name == "linear":
        ref = _kalman(prior, model, y)
        out["kalman_residual"] = float(max(np.max(np.abs(post.mean - ref.mean)), np.max(np.abs(post.cov - ref.cov))))
    if args.trace:
        Path(args.trace).write_text(json.dumps(result.trace.to_dict(), indent=2) + "\n")
    if args.json:
        print(json.dumps(out, indent=2))
    else:
        np.set_printoptions(precision=8, suppress=False)
        print(f"posterior mean: {np.array2string(post.mean, separator=', ')}")
        print(f"posterior cov:  {np.array2string(post.cov, separator=', ')}")
        print(f"iterations:     {result.n_iter}{' (diverged)' if result.trace.diverged else ''}")
        if "kld_vs_oracle" in out:
            print(f"kld vs oracle:  {out['kld_vs_oracle']:.6e}")
        if "kalman_residual" in out:
            print(f"kalman residual: {out['kalman_residual']:.3e}")
        if args.trace:
            print(f"trace written to {args.trace}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dampedplf", description="Damped posterior linearization filtering benchmarks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a YAML config")
    run.add_argument("config", help=f"config path or bundled name ({', '.join(bundled_config_names())})")
    run.add_argument("--jobs", type=int, default=default_jobs(), help="parallel worker processes (default: all cores)")
    run.add_argument("--output-dir", help="override output directory")
    run.add_argument("-q", "--quiet", action="store_true")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="validate a config without running it")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)

    up = sub.add_parser("update", help="run one measurement update and print the posterior")
    up.add_argument("--model", choices=MODEL_CHOICES, required=True)
    up.add_argument("--prior-mean", type=float, nargs="+", required=True)
    g = up.add_mutually_exclusive_group()
    g.add_argument("--prior-var", type=float, nargs="+", help="scalar or diagonal prior variance")
    g.add_argument("--prior-cov", type=float, nargs="+", help="full prior covariance, row-major")
    up.add_argument("--y", type=float, nargs="+", required=True)
    up.add_argument("--r", type=float, nargs="+", help="noise variance: scalar, diagonal or full row-major")
    up.add_argument("--H", type=float, nargs="+", help="linear model matrix, row-major (d x n)")
    up.add_argument("--c", type=float, nargs="+", help="linear model offset")
    up.add_argument("--beacons", type=float, nargs="+", help="range model beacon coordinates, flattened")
    up.add_argument("--alg", choices=sorted(set(ESTIMATORS) | set(ALIASES)), default="diplf")
    up.add_argument("--backend", choices=["mc", "ekf", "ckf", "ukf", "exact"], default="ckf")
    up.add_argument("--seed", type=int, default=0, help="Monte Carlo seed")
    up.add_argument("--mc-samples", type=int, default=100_000)
    up.add_argument("--ruf-steps", type=int, default=10)
    up.add_argument("--max-iter", type=int, help="iteration cap (IPLF/IEKF iterations, outer rounds of the damped filter)")
    up.add_argument("--tau", type=float)
    up.add_argument("--beta", type=float)
    up.add_argument("--trace", help="write the iteration trace to this JSON file")
    up.add_argument("--oracle", action="store_true", help="also print KLD against a grid posterior")
    up.add_argument("--json", action="store_true", help="print a JSON object instead of text")
    up.set_defaults(func=cmd_update)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FilterError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
