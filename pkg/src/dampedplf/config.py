"""Experiment configuration: YAML files validated against a JSON schema.

Validation happens in full before anything is computed. Errors carry the
file name and line of the offending key, e.g.
``range.yaml:7: params.tau: 1.5 is greater than or equal to the maximum of 1``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, List, Optional

import jsonschema
import numpy as np
import yaml

from .exceptions import ConfigError
from .filters import DiplfParams
from .gaussian import GaussianState
from .models import MeasurementModel, make_model

OUTPUT_DIR_ENV = "DAMPEDPLF_OUTPUT_DIR"

_ALGORITHMS = ["ggf", "ruf", "iplf", "diplf", "dplf", "iekf", "damped_iekf"]
_BACKENDS = ["mc", "ekf", "ckf", "ukf", "exact"]
_UNIT_OPEN = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_POS_INT = {"type": "integer", "minimum": 1}
_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_MATRIX = {"type": "array", "items": _VECTOR, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment"],
    "properties": {
        "experiment": {"enum": ["arctan", "range", "sweep", "custom"]},
        "seed": {"type": "integer", "minimum": 0},
        "n_trials": _POS_INT,
        "jobs": _POS_INT,
        "algorithms": {"type": "array", "items": {"enum": _ALGORITHMS}, "minItems": 1, "uniqueItems": True},
        "backends": {"type": "array", "items": {"enum": _BACKENDS}, "minItems": 1, "uniqueItems": True},
        "mc_samples": {"type": "integer", "minimum": 2},
        "ruf_steps": _POS_INT,
        "ukf": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "beta": {"type": "number"},
                "kappa": {"type": "number"},
            },
        },
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau": _UNIT_OPEN,
                "beta": _UNIT_OPEN,
                "alpha_min": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "outer_gain_factor": _UNIT_OPEN,
                "max_inner": _POS_INT,
                "max_outer": _POS_INT,
                "iplf_kld_threshold": {"type": "number", "exclusiveMinimum": 0},
                "iplf_max_iter": _POS_INT,
                "outer_criterion": {"enum": ["product", "likelihood"]},
                "single_inner": {"type": "boolean"},
                "pin_alpha": {"type": "boolean"},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_std": {"type": "number", "exclusiveMinimum": 0},
                "nodes": {"type": "integer", "minimum": 3},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["tau", "beta"],
            "properties": {
                "tau": {"type": "array", "items": _UNIT_OPEN, "minItems": 1},
                "beta": {"type": "array", "items": _UNIT_OPEN, "minItems": 1},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["arctan", "quadratic", "range", "linear"]},
                "noise_var": {"type": "number", "exclusiveMinimum": 0},
                "noise_cov": _MATRIX,
                "beacons": _MATRIX,
                "H": _MATRIX,
                "c": _VECTOR,
            },
        },
        "prior": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mean", "cov"],
            "properties": {"mean": _VECTOR, "cov": _MATRIX},
        },
        "y": _VECTOR,
        "oracle": {"type": "boolean"},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string", "minLength": 1},
                "stem": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}, "minItems": 1, "uniqueItems": True},
                "traces": {"type": "boolean"},
            },
        },
    },
    "allOf": [
        {"if": {"properties": {"experiment": {"const": "custom"}}}, "then": {"required": ["model", "prior", "y"]}},
        {"if": {"properties": {"experiment": {"const": "sweep"}}}, "then": {"required": ["sweep"]}},
    ],
}

_DEFAULT_BACKENDS = {"arctan": _BACKENDS[:4], "range": _BACKENDS[:4], "sweep": ["ckf"], "custom": ["ckf"]}
_DEFAULT_TRIALS = {"range": 1000, "sweep": 200}


@dataclass
class ExperimentConfig:
    """Validated experiment description. Build it with :func:`load_config`."""

    experiment: str
    seed: int
    algorithms: List[str]
    backends: List[str]
    params: DiplfParams
    n_trials: int = 1
    jobs: Optional[int] = None
    mc_samples: int = 100_000
    ruf_steps: int = 10
    ukf_params: dict = field(default_factory=dict)
    grid_std: Optional[float] = None
    grid_nodes: Optional[int] = None
    tau_grid: List[float] = field(default_factory=list)
    beta_grid: List[float] = field(default_factory=list)
    model: Optional[MeasurementModel] = None
    prior: Optional[GaussianState] = None
    y: Optional[np.ndarray] = None
    oracle: bool = True
    output_dir: Path = Path("results")
    stem: Optional[str] = None
    formats: List[str] = field(default_factory=lambda: ["csv", "json"])
    traces: bool = False
    source: Optional[str] = None


def _line_of(root: Optional[yaml.Node], path) -> Optional[int]:
    """1-based line of the node at `path`, or of its deepest existing ancestor."""
    node = root
    for key in path:
        child = None
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == str(key):
                    child = k if key == path[-1] else v
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            child = node.value[key]
        if child is None:
            break
        node = child
    return None if node is None else node.start_mark.line + 1


def _fail(source: str, root, path, message: str):
    line = _line_of(root, list(path))
    where = f"{source}:{line}" if line else source
    dotted = ".".join(str(p) for p in path)
    raise ConfigError(f"{where}: {dotted + ': ' if dotted else ''}{message}")


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and fully validate YAML text."""
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(e.path), list(map(str, e.path))))
    if errors:
        err = errors[0]
        path = list(err.path)
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            if extra:
                _fail(source, root, path + [extra[0]], f"unknown key {extra[0]!r}")
        _fail(source, root, path, err.message)
    return _build(data, root, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))


def _build(data: dict, root, source: str) -> ExperimentConfig:
    kind = data["experiment"]
    try:
        params = DiplfParams(**data.get("params", {}))
    except ValueError as exc:
        _fail(source, root, ["params"], str(exc))
    model = prior = y = None
    if "model" in data:
        spec = dict(data["model"])
        name = spec.pop("name")
        try:
            model = make_model(name, **spec)
        except (TypeError, ValueError) as exc:
            _fail(source, root, ["model"], str(exc))
    if "prior" in data:
        try:
            prior = GaussianState(data["prior"]["mean"], data["prior"]["cov"])
        except ValueError as exc:
            _fail(source, root, ["prior"], str(exc))
        if model is not None and prior.dim != model.state_dim:
            _fail(source, root, ["prior", "mean"], f"length {prior.dim} does not match model state dimension {model.state_dim}")
    if "y" in data:
        y = np.asarray(data["y"], dtype=float)
        if model is not None and y.size != model.meas_dim:
            _fail(source, root, ["y"], f"length {y.size} does not match model measurement dimension {model.meas_dim}")
    if kind != "custom":
        for key in ("model", "prior", "y"):
            if key in data:
                _fail(source, root, [key], f"only allowed for custom experiments, not {kind!r}")
    if "exact" in data.get("backends", []) and (model is None or model.exact_moments is None):
        _fail(source, root, ["backends"], "'exact' needs a model with closed-form moments")
    grid = data.get("grid", {})
    output = data.get("output", {})
    out_dir = os.environ.get(OUTPUT_DIR_ENV) or output.get("dir", "results")
    algorithms = [("diplf" if a == "dplf" else a) for a in data.get("algorithms", ["ggf", "ruf", "iplf", "diplf"])]
    sweep = data.get("sweep", {})
    return ExperimentConfig(
        experiment=kind,
        seed=int(data.get("seed", {"arctan": 10, "range": 1, "sweep": 1}.get(kind, 0))),
        algorithms=algorithms,
        backends=list(data.get("backends", _DEFAULT_BACKENDS[kind])),
        params=params,
        n_trials=int(data.get("n_trials", _DEFAULT_TRIALS.get(kind, 1))),
        jobs=data.get("jobs"),
        mc_samples=int(data.get("mc_samples", 100_000)),
        ruf_steps=int(data.get("ruf_steps", 10)),
        ukf_params=dict(data.get("ukf", {})),
        grid_std=grid.get("n_std"),
        grid_nodes=grid.get("nodes"),
        tau_grid=list(sweep.get("tau", [])),
        beta_grid=list(sweep.get("beta", [])),
        model=model,
        prior=prior,
        y=y,
        oracle=bool(data.get("oracle", True)),
        output_dir=Path(out_dir),
        stem=output.get("stem"),
        formats=list(output.get("formats", ["csv", "json"])),
        traces=bool(output.get("traces", False)),
        source=source,
    )


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (``arctan``, ``range``, ``sweep``, ...)."""
    ref = resources.files("dampedplf") / "configs" / f"{name}.yaml"
    if not ref.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return Path(str(ref))


def bundled_config_names() -> List[str]:
    folder = resources.files("dampedplf") / "configs"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".yaml"))


def run_config(cfg: ExperimentConfig, jobs: Optional[int] = None) -> Any:
    """Execute a validated config and return its ExperimentReport."""
    from . import experiments as E

    jobs = jobs or cfg.jobs or 1
    common = {"mc_samples": cfg.mc_samples, "ukf_params": cfg.ukf_params or None}
    grid = {k: v for k, v in (("grid_std", cfg.grid_std), ("grid_nodes", cfg.grid_nodes)) if v is not None}
    if cfg.experiment == "arctan":
        return E.run_arctan_experiment(cfg.params, cfg.seed, cfg.backends, cfg.algorithms, ruf_steps=cfg.ruf_steps, traces=cfg.traces, **common, **grid)
    if cfg.experiment == "range":
        return E.run_range_experiment(cfg.n_trials, cfg.seed, cfg.params, cfg.backends, cfg.algorithms, ruf_steps=cfg.ruf_steps, jobs=jobs, **common, **grid)
    if cfg.experiment == "sweep":
        return E.sweep_params(cfg.tau_grid, cfg.beta_grid, cfg.n_trials, cfg.seed, cfg.backends, cfg.params, jobs=jobs, **common, **grid)
    return E.run_custom_experiment(
        cfg.model, cfg.prior, cfg.y, cfg.params, cfg.seed, cfg.backends, cfg.algorithms,
        ruf_steps=cfg.ruf_steps, oracle=cfg.oracle, traces=cfg.traces, **common, **grid,
    )
