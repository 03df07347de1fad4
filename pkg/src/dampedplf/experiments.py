"""Benchmark runners: arctan divergence example, range positioning, tau/beta sweep.

Every runner returns an :class:`ExperimentReport` whose CSV/JSON output is
bit-reproducible for a fixed seed. Wall-clock timings are kept apart from
the reproducible payload (``report.timing``) and written to their own file.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import __version__
from .estimators import make_filter
from .exceptions import FilterError
from .filters import DiplfParams
from .gaussian import GaussianState
from .grid import GridSpec, grid_posterior, kld_grid
from .models import DEFAULT_BEACONS, MeasurementModel, arctan_model, range_model
from .moments import DEFAULT_MC_SAMPLES, MomentBackend, MonteCarloBackend, make_backend

logger = logging.getLogger(__name__)

ALGORITHMS = ("ggf", "ruf", "iplf", "diplf")
BACKENDS = ("mc", "ekf", "ckf", "ukf")
CSV_COLUMNS = ("experiment", "algorithm", "backend", "tau", "beta", "metric", "value", "stderr", "n", "n_errors")
MAX_ERROR_FRACTION = 0.01


class CountingBackend(MomentBackend):
    """Wraps a backend and counts moment evaluations (a deterministic cost proxy)."""

    def __init__(self, inner: MomentBackend):
        self.inner = inner
        self.name = inner.name
        self.calls = 0

    def evaluator(self, model, cov):
        ev = self.inner.evaluator(model, cov)

        def counted(mean):
            self.calls += 1
            return ev(mean)

        return counted

    def get_params(self):
        return self.inner.get_params()


def backend_for(name: str, mc_seed: int, mc_samples: int = DEFAULT_MC_SAMPLES, ukf_params: Optional[dict] = None) -> MomentBackend:
    name = name.lower()
    if name in ("mc", "montecarlo"):
        return MonteCarloBackend(sample_count=mc_samples, seed=mc_seed)
    if name in ("ukf", "unscented"):
        return make_backend(name, **(ukf_params or {}))
    return make_backend(name)


def _format_value(metric: str, value) -> str:
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return "nan"
    if metric.startswith("iter_mean"):
        return f"{value:.2f}"
    if metric == "kld":
        return f"{value:.5e}"
    return f"{value:.6g}"


@dataclass
class ExperimentReport:
    """Results of one experiment.

    Attributes:
        name: experiment kind (``arctan``, ``range``, ``sweep``, ``custom``).
        rows: one dict per cell with keys from ``CSV_COLUMNS``.
        metadata: seeds, grid spec, parameters, versions.
        errors: ``{"trial", "algorithm", "backend", "error"}`` records.
        timing: wall-clock seconds per cell (not reproducible; kept apart).
        traces: optional JSON-ready update traces keyed by cell.
    """

    name: str
    rows: List[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    errors: List[dict] = field(default_factory=list)
    timing: Dict[str, float] = field(default_factory=dict)
    traces: Dict[str, dict] = field(default_factory=dict)

    def value(self, algorithm: str, backend: str, metric: str = "kld", **match) -> float:
        for row in self.rows:
            if row["algorithm"] == algorithm and row["backend"] == backend and row["metric"] == metric:
                if all(row.get(k) == v for k, v in match.items()):
                    return row["value"]
        raise KeyError((algorithm, backend, metric, match))

    def table(self, metric: str = "kld") -> Dict[str, Dict[str, float]]:
        """``{backend: {algorithm: value}}`` for one metric."""
        out: Dict[str, Dict[str, float]] = {}
        for row in self.rows:
            if row["metric"] == metric:
                out.setdefault(row["backend"], {})[row["algorithm"]] = row["value"]
        return out

    def error_fraction(self) -> float:
        n_trials = int(self.metadata.get("n_trials", 1)) or 1
        cells = max(1, len({(r["algorithm"], r["backend"], r.get("tau"), r.get("beta")) for r in self.rows}))
        return len(self.errors) / (n_trials * cells)

    def within_error_policy(self) -> bool:
        if self.name in ("range", "sweep"):
            counts: Dict[tuple, int] = {}
            for e in self.errors:
                key = (e["algorithm"], e["backend"])
                counts[key] = counts.get(key, 0) + 1
            n_trials = int(self.metadata.get("n_trials", 1))
            return all(c < MAX_ERROR_FRACTION * n_trials for c in counts.values())
        return not self.errors

    # -- serialization ----------------------------------------------------

    def csv_rows(self) -> List[List[str]]:
        out = []
        for row in self.rows:
            line = []
            for col in CSV_COLUMNS:
                v = row.get(col)
                if col == "experiment":
                    v = self.name
                if col in ("value", "stderr"):
                    line.append("" if v is None and col == "stderr" else _format_value(row["metric"], v))
                elif col in ("tau", "beta"):
                    line.append("" if v is None else f"{v:g}")
                else:
                    line.append("" if v is None else str(v))
            out.append(line)
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            writer.writerows(self.csv_rows())
        return path

    def to_table_csv(self, path, metric: str = "kld", columns: Sequence[str] = None) -> Path:
        """Pivoted layout: one row per backend, one column per algorithm."""
        table = self.table(metric)
        columns = list(columns or dict.fromkeys(a for row in table.values() for a in row))
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["backend", *columns])
            for backend, cells in table.items():
                writer.writerow([backend, *(_format_value(metric, cells.get(c)) for c in columns)])
        return path

    def to_dict(self, include_traces: bool = False) -> dict:
        out = {
            "experiment": self.name,
            "metadata": self.metadata,
            "rows": self.rows,
            "errors": self.errors,
        }
        if include_traces:
            out["traces"] = self.traces
        return out

    def to_json(self, path, include_traces: bool = False) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(include_traces), indent=2, sort_keys=True, default=_jsonable) + "\n")
        return path

    def write(self, out_dir, stem: Optional[str] = None, formats: Iterable[str] = ("csv", "json"), include_traces: bool = False) -> List[Path]:
        """Write CSV/JSON artifacts plus a separate timing file."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or self.name
        written = []
        formats = set(formats)
        if "csv" in formats:
            written.append(self.to_csv(out_dir / f"{stem}.csv"))
            if self.name in ("arctan", "range", "custom"):
                written.append(self.to_table_csv(out_dir / f"{stem}_table.csv"))
            if any(r["metric"].startswith("iter_mean") for r in self.rows):
                written.append(self._iterations_csv(out_dir / f"{stem}_iterations.csv"))
        if "json" in formats:
            written.append(self.to_json(out_dir / f"{stem}.json", include_traces))
        timing = out_dir / f"{stem}_timing.json"
        timing.write_text(json.dumps(self.timing, indent=2, sort_keys=True) + "\n")
        written.append(timing)
        return written

    def _iterations_csv(self, path) -> Path:
        rows: Dict[str, Dict[int, float]] = {}
        for row in self.rows:
            if row["metric"].startswith("iter_mean_"):
                k = int(row["metric"].rsplit("_", 1)[1])
                rows.setdefault(f"{row['algorithm']}/{row['backend']}", {})[k] = row["value"]
        n = max((max(v) for v in rows.values()), default=0)
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["filter", *range(1, n + 1)])
            for name, values in rows.items():
                writer.writerow([name, *(_format_value("iter_mean", values.get(k)) for k in range(1, n + 1))])
        return Path(path)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, GaussianState):
        return obj.to_dict()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _params_dict(params: DiplfParams) -> dict:
    return {k: getattr(params, k) for k in DiplfParams.field_names()}


# -- arctan example -------------------------------------------------------------


ARCTAN_PRIOR = GaussianState([2.75], [[1.0]])
ARCTAN_Y = (0.0,)
ARCTAN_NOISE = 1e-4
ARCTAN_SEED = 10


def run_arctan_experiment(
    params: Optional[DiplfParams] = None,
    seed: int = ARCTAN_SEED,
    backends: Sequence[str] = BACKENDS,
    algorithms: Sequence[str] = ALGORITHMS,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    ruf_steps: int = 10,
    grid_std: float = 8.0,
    grid_nodes: int = 200_000,
    n_iterations: int = 6,
    ukf_params: Optional[dict] = None,
    traces: bool = False,
) -> ExperimentReport:
    """Scalar arctan measurement with prior N(2.75, 1), y = 0, R = 1e-4.

    Produces the KLD of every (algorithm, backend) cell against a grid
    oracle and the first `n_iterations` means of IPLF (Monte Carlo moments,
    seeded with `seed`) and of the iterated EKF.
    """
    params = params or DiplfParams()
    model = arctan_model(ARCTAN_NOISE)
    prior, y = ARCTAN_PRIOR, np.array(ARCTAN_Y)
    spec = GridSpec.around(prior, grid_std, grid_nodes)
    truth = grid_posterior(prior, model, y, spec)
    report = ExperimentReport("arctan")
    report.metadata = {
        "version": __version__,
        "seed": seed,
        "mc_samples": mc_samples,
        "ruf_steps": ruf_steps,
        "prior": prior.to_dict(),
        "y": list(ARCTAN_Y),
        "noise_var": ARCTAN_NOISE,
        "grid": {"lower": spec.lower, "upper": spec.upper, "count": spec.count},
        "params": _params_dict(params),
        "backends": list(backends),
        "algorithms": list(algorithms),
        "ukf_params": ukf_params or {},
        "n_trials": 1,
    }
    for b in backends:
        for a in algorithms:
            be = backend_for(b, seed, mc_samples, ukf_params)
            t0 = time.perf_counter()
            try:
                result = make_filter(a, be, params, ruf_steps).update(prior, model, y)
                value = kld_grid(truth, result.posterior)
            except FilterError as exc:
                report.errors.append({"trial": 0, "algorithm": a, "backend": b, "error": repr(exc)})
                continue
            report.timing[f"{a}/{b}"] = time.perf_counter() - t0
            report.rows.append(_row(a, b, "kld", value, n=1))
            report.rows.append(_row(a, b, "n_iter", float(result.n_iter), n=1))
            if traces:
                report.traces[f"{a}/{b}"] = result.trace.to_dict()

    iterated = [
        ("iplf", "mc", make_filter("iplf", backend_for("mc", seed, mc_samples), params)),
        ("iekf", "ekf", make_filter("iekf", None, params)),
    ]
    for a, b, est in iterated:
        result = est.update(prior, model, y)
        for k, mean in enumerate(result.trace.means[:n_iterations, 0], start=1):
            report.rows.append(_row(a, b, f"iter_mean_{k}", float(mean), n=1))
        report.rows.append(_row(a, b, "converged", float(not result.trace.diverged), n=1))
    return report


def _row(algorithm, backend, metric, value, stderr=None, n=None, n_errors=0, **extra) -> dict:
    row = {"algorithm": algorithm, "backend": backend, "metric": metric, "value": value, "stderr": stderr, "n": n, "n_errors": n_errors}
    row.update(extra)
    return row


# -- range test -----------------------------------------------------------------


RANGE_PRIOR = GaussianState([0.0, 0.0], np.eye(2))


def trial_streams(seed: int, trial: int):
    """Independent (truth, noise, Monte Carlo) seed sequences for one trial."""
    return np.random.SeedSequence(seed, spawn_key=(trial,)).spawn(3)


def sample_trial(model: MeasurementModel, prior: GaussianState, seed: int, trial: int):
    """Draw ``(x_true, y, mc_seed)`` for trial number `trial`."""
    s_truth, s_noise, s_mc = trial_streams(seed, trial)
    x = prior.mean + np.linalg.cholesky(prior.cov) @ np.random.default_rng(s_truth).standard_normal(prior.dim)
    noise = np.linalg.cholesky(model.noise_cov) @ np.random.default_rng(s_noise).standard_normal(model.meas_dim)
    y = model.h(x) + noise
    return x, y, int(s_mc.generate_state(1)[0])


@dataclass(frozen=True)
class _TrialJob:
    seed: int
    algorithms: tuple
    backends: tuple
    params: tuple  # ((label, DiplfParams), ...)
    ruf_steps: int
    mc_samples: int
    grid_std: float
    grid_nodes: int
    beacons: tuple
    ukf_params: tuple


def _run_trial(job: _TrialJob, trial: int) -> dict:
    model = range_model(job.beacons)
    prior = RANGE_PRIOR
    _, y, mc_seed = sample_trial(model, prior, job.seed, trial)
    out = {"trial": trial, "kld": {}, "evals": {}, "time": {}, "errors": []}
    try:
        truth = grid_posterior(prior, model, y, GridSpec.around(prior, job.grid_std, job.grid_nodes))
    except FilterError as exc:
        for label, _ in job.params:
            for b in job.backends:
                for a in job.algorithms:
                    out["errors"].append({"trial": trial, "algorithm": a, "backend": b, "label": label, "error": repr(exc)})
        return out
    for b in job.backends:
        for label, params in job.params:
            for a in job.algorithms:
                be = CountingBackend(backend_for(b, mc_seed, job.mc_samples, dict(job.ukf_params)))
                key = (label, a, b)
                t0 = time.perf_counter()
                try:
                    result = make_filter(a, be, params, job.ruf_steps).update(prior, model, y)
                    out["kld"][key] = kld_grid(truth, result.posterior)
                except FilterError as exc:
                    out["errors"].append({"trial": trial, "algorithm": a, "backend": b, "label": label, "error": repr(exc)})
                    continue
                out["time"][key] = time.perf_counter() - t0
                out["evals"][key] = be.calls
    return out


def _run_chunk(job: _TrialJob, trials: Sequence[int]) -> List[dict]:
    return [_run_trial(job, t) for t in trials]


def _run_trials(job: _TrialJob, n_trials: int, jobs: int = 1) -> List[dict]:
    trials = list(range(n_trials))
    jobs = max(1, int(jobs or 1))
    if jobs == 1:
        return _run_chunk(job, trials)
    chunks = [trials[i::jobs] for i in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_run_chunk, [job] * len(chunks), chunks))
    return sorted((r for part in parts for r in part), key=lambda r: r["trial"])


def _aggregate(results: List[dict], labels, algorithms, backends):
    """Mean/stderr per (label, algorithm, backend) in trial order."""
    summary = {}
    for label in labels:
        for b in backends:
            for a in algorithms:
                key = (label, a, b)
                klds = np.array([r["kld"][key] for r in results if key in r["kld"]])
                evals = np.array([r["evals"][key] for r in results if key in r["evals"]], dtype=float)
                secs = np.array([r["time"][key] for r in results if key in r["time"]])
                summary[key] = {
                    "kld": float(klds.mean()) if klds.size else float("nan"),
                    "stderr": float(klds.std(ddof=1) / np.sqrt(klds.size)) if klds.size > 1 else float("nan"),
                    "n": int(klds.size),
                    "evals": float(evals.mean()) if evals.size else float("nan"),
                    "seconds": float(secs.mean()) if secs.size else float("nan"),
                }
    return summary


def run_range_experiment(
    n_trials: int = 1000,
    seed: int = 1,
    params: Optional[DiplfParams] = None,
    backends: Sequence[str] = BACKENDS,
    algorithms: Sequence[str] = ALGORITHMS,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    ruf_steps: int = 10,
    grid_std: float = 6.0,
    grid_nodes: int = 600,
    beacons=DEFAULT_BEACONS,
    ukf_params: Optional[dict] = None,
    jobs: int = 1,
) -> ExperimentReport:
    """2-D positioning from three ranges, prior N(0, I), R = I.

    Each trial samples a true position from the prior and a noisy range
    vector, runs every (algorithm, backend) cell and scores it by KLD
    against a per-trial grid oracle. Reports mean KLD and its standard error.
    """
    params = params or DiplfParams()
    job = _TrialJob(
        seed, tuple(algorithms), tuple(backends), (("default", params),), ruf_steps, mc_samples,
        grid_std, grid_nodes, tuple(map(tuple, beacons)), tuple(sorted((ukf_params or {}).items())),
    )
    results = _run_trials(job, n_trials, jobs)
    report = ExperimentReport("range")
    report.metadata = {
        "version": __version__,
        "seed": seed,
        "n_trials": n_trials,
        "mc_samples": mc_samples,
        "ruf_steps": ruf_steps,
        "prior": RANGE_PRIOR.to_dict(),
        "beacons": [list(b) for b in beacons],
        "grid": {"n_std": grid_std, "nodes_per_axis": grid_nodes},
        "params": _params_dict(params),
        "backends": list(backends),
        "algorithms": list(algorithms),
        "ukf_params": ukf_params or {},
    }
    summary = _aggregate(results, ["default"], algorithms, backends)
    report.errors = [e for r in results for e in r["errors"]]
    for b in backends:
        for a in algorithms:
            s = summary[("default", a, b)]
            n_err = sum(1 for e in report.errors if e["algorithm"] == a and e["backend"] == b)
            report.rows.append(_row(a, b, "kld", s["kld"], s["stderr"], s["n"], n_err))
            report.rows.append(_row(a, b, "moment_evals", s["evals"], None, s["n"], n_err))
            report.timing[f"{a}/{b}"] = s["seconds"]
    if report.errors:
        logger.warning("%d cell evaluations failed and were excluded", len(report.errors))
    return report


def sweep_params(
    tau_grid: Sequence[float],
    beta_grid: Sequence[float],
    n_trials: int = 200,
    seed: int = 1,
    backends: Sequence[str] = ("ckf",),
    base_params: Optional[DiplfParams] = None,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    grid_std: float = 6.0,
    grid_nodes: int = 600,
    ukf_params: Optional[dict] = None,
    jobs: int = 1,
) -> ExperimentReport:
    """Mean KLD and cost of the damped filter over a (tau, beta) grid on the range test.

    Trials (and their grid oracles) are shared across all cells. Cost is
    reported as the mean number of moment evaluations per update, which is
    deterministic; wall-clock means go to ``report.timing``.
    """
    base = base_params or DiplfParams()
    cells = []
    for tau in tau_grid:
        for beta in beta_grid:
            values = _params_dict(base)
            values.update(tau=float(tau), beta=float(beta))
            cells.append((f"{tau:g},{beta:g}", DiplfParams(**values)))
    job = _TrialJob(
        seed, ("diplf",), tuple(backends), tuple(cells), 10, mc_samples, grid_std, grid_nodes,
        tuple(map(tuple, DEFAULT_BEACONS)), tuple(sorted((ukf_params or {}).items())),
    )
    results = _run_trials(job, n_trials, jobs)
    summary = _aggregate(results, [c[0] for c in cells], ("diplf",), backends)
    report = ExperimentReport("sweep")
    report.metadata = {
        "version": __version__,
        "seed": seed,
        "n_trials": n_trials,
        "tau_grid": [float(t) for t in tau_grid],
        "beta_grid": [float(b) for b in beta_grid],
        "backends": list(backends),
        "base_params": _params_dict(base),
        "grid": {"n_std": grid_std, "nodes_per_axis": grid_nodes},
        "mc_samples": mc_samples,
    }
    report.errors = [e for r in results for e in r["errors"]]
    for label, p in cells:
        for b in backends:
            s = summary[(label, "diplf", b)]
            n_err = sum(1 for e in report.errors if e["backend"] == b and e.get("label") == label)
            report.rows.append(_row("diplf", b, "kld", s["kld"], s["stderr"], s["n"], n_err, tau=p.tau, beta=p.beta))
            report.rows.append(_row("diplf", b, "moment_evals", s["evals"], None, s["n"], n_err, tau=p.tau, beta=p.beta))
            report.timing[f"{label}/{b}"] = s["seconds"]
    return report


# -- single custom update ------------------------------------------------------------


def run_custom_experiment(
    model: MeasurementModel,
    prior: GaussianState,
    y,
    params: Optional[DiplfParams] = None,
    seed: int = 0,
    backends: Sequence[str] = ("ckf",),
    algorithms: Sequence[str] = ALGORITHMS,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    ruf_steps: int = 10,
    grid_std: float = 8.0,
    grid_nodes: Optional[int] = None,
    ukf_params: Optional[dict] = None,
    oracle: bool = True,
    traces: bool = False,
) -> ExperimentReport:
    """Run every (algorithm, backend) cell once on a user-supplied problem."""
    params = params or DiplfParams()
    y = np.atleast_1d(np.asarray(y, dtype=float))
    truth = None
    if oracle:
        truth = grid_posterior(prior, model, y, GridSpec.around(prior, grid_std, grid_nodes))
    report = ExperimentReport("custom")
    report.metadata = {
        "version": __version__,
        "seed": seed,
        "model": {"name": model.name, "params": model.params},
        "prior": prior.to_dict(),
        "y": y.tolist(),
        "params": _params_dict(params),
        "backends": list(backends),
        "algorithms": list(algorithms),
        "n_trials": 1,
    }
    for b in backends:
        for a in algorithms:
            t0 = time.perf_counter()
            try:
                result = make_filter(a, backend_for(b, seed, mc_samples, ukf_params), params, ruf_steps).update(prior, model, y)
            except FilterError as exc:
                report.errors.append({"trial": 0, "algorithm": a, "backend": b, "error": repr(exc)})
                continue
            report.timing[f"{a}/{b}"] = time.perf_counter() - t0
            if truth is not None:
                report.rows.append(_row(a, b, "kld", kld_grid(truth, result.posterior), n=1))
            for k, mean in enumerate(result.posterior.mean):
                report.rows.append(_row(a, b, f"posterior_mean_{k}", float(mean), n=1))
            report.rows.append(_row(a, b, "n_iter", float(result.n_iter), n=1))
            if traces:
                report.traces[f"{a}/{b}"] = result.trace.to_dict()
    return report


def default_jobs() -> int:
    return os.cpu_count() or 1
