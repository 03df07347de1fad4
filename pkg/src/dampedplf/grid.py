"""Brute-force posterior on a regular grid and grid-quadrature KLD."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import GridTooSmallError
from .gaussian import GaussianState, log_pdf_points
from .models import MeasurementModel, as_observation

BOUNDARY_MASS_TOL = 1e-6
DEFAULT_NODES = {1: 200_000, 2: 600}


@dataclass(frozen=True)
class GridSpec:
    """Uniform node grid: one ``(lower, upper, count)`` triple per axis."""

    lower: tuple
    upper: tuple
    count: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        count = tuple(int(v) for v in np.atleast_1d(self.count))
        if not len(lower) == len(upper) == len(count):
            raise ValueError("grid bounds and counts must have equal length")
        if any(u <= lo for lo, u in zip(lower, upper)) or any(c < 3 for c in count):
            raise ValueError("each axis needs upper > lower and at least 3 nodes")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "count", count)

    @classmethod
    def around(cls, g: GaussianState, n_std: float = 8.0, count: Optional[Sequence[int]] = None) -> "GridSpec":
        """Box of ``g.mean +- n_std`` marginal standard deviations."""
        if count is None:
            count = DEFAULT_NODES.get(g.dim, 100)
        count = np.broadcast_to(np.atleast_1d(count), (g.dim,))
        half = n_std * g.std
        return cls(tuple(g.mean - half), tuple(g.mean + half), tuple(count))

    def axes(self):
        return [np.linspace(lo, u, c) for lo, u, c in zip(self.lower, self.upper, self.count)]

    @property
    def cell_volume(self) -> float:
        return float(np.prod([(u - lo) / (c - 1) for lo, u, c in zip(self.lower, self.upper, self.count)]))

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.lower, self.upper, tuple(factor * (c - 1) + 1 for c in self.count))


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Normalized log density tabulated on the nodes of a :class:`GridSpec`."""

    spec: GridSpec
    log_density: np.ndarray

    @property
    def cell_volume(self) -> float:
        return self.spec.cell_volume

    @property
    def axes(self):
        return self.spec.axes()

    @cached_property
    def _points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        pts.setflags(write=False)
        return pts

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(N, n)`` in C order of the log-density array."""
        return self._points

    def weights(self) -> np.ndarray:
        """Probability mass per node (sums to one)."""
        return np.exp(self.log_density).ravel() * self.cell_volume

    def mean(self) -> np.ndarray:
        return self.weights() @ self.points()

    def cov(self) -> np.ndarray:
        w = self.weights()
        d = self.points() - w @ self.points()
        return (d * w[:, None]).T @ d

    def mode(self) -> np.ndarray:
        return self.points()[np.argmax(self.log_density.ravel())]

    def moment_matched(self) -> GaussianState:
        return GaussianState(self.mean(), self.cov())


def _normalize(spec: GridSpec, log_unnorm: np.ndarray) -> np.ndarray:
    return log_unnorm - logsumexp(log_unnorm) - np.log(spec.cell_volume)


def _boundary_mass(spec: GridSpec, log_density: np.ndarray) -> float:
    mass = np.exp(log_density) * spec.cell_volume
    inner = mass
    for axis in range(mass.ndim):
        inner = np.take(inner, np.arange(1, inner.shape[axis] - 1), axis=axis)
    return float(mass.sum() - inner.sum())


def _grid_points(spec: GridSpec) -> np.ndarray:
    return GridDensity(spec, np.empty(spec.count)).points()


def render_gaussian(g: GaussianState, spec: GridSpec) -> GridDensity:
    """Tabulate a Gaussian on the grid (renormalized to the grid)."""
    log_unnorm = log_pdf_points(_grid_points(spec), g).reshape(spec.count)
    return GridDensity(spec, _normalize(spec, log_unnorm))


def grid_posterior(prior: GaussianState, model: MeasurementModel, obs, spec: Optional[GridSpec] = None, check_boundary: bool = True) -> GridDensity:
    """Posterior ``p(x | y)`` proportional to prior times likelihood on a grid.

    Defaults to ``prior.mean +- 8`` prior standard deviations with 2e5 nodes
    in 1-D and 600 per axis in 2-D.

    Raises:
        GridTooSmallError: if more than ``1e-6`` of the posterior mass sits on
            the outermost grid nodes.
    """
    y = as_observation(obs, model).y
    spec = spec or GridSpec.around(prior)
    if len(spec.count) != model.state_dim:
        raise ValueError("grid dimension does not match the state dimension")
    shape = spec.count
    points = _grid_points(spec)
    log_prior = log_pdf_points(points, prior)
    resid = np.asarray(model.h(points), dtype=float).reshape(-1, model.meas_dim) - y
    log_lik = log_pdf_points(resid, GaussianState(np.zeros(model.meas_dim), model.noise_cov))
    log_density = _normalize(spec, (log_prior + log_lik).reshape(shape))
    if check_boundary:
        edge = _boundary_mass(spec, log_density)
        if edge > BOUNDARY_MASS_TOL:
            raise GridTooSmallError(f"posterior mass {edge:.3g} on the grid boundary; widen the grid")
    density = GridDensity(spec, log_density)
    density.__dict__["_points"] = points
    return density


def kld_grid(truth: GridDensity, approx: GaussianState) -> float:
    """KL(truth || approx) by node quadrature over nodes with positive density."""
    log_p = truth.log_density.ravel()
    log_q = log_pdf_points(truth.points(), approx)
    p = np.exp(log_p)
    keep = p > 0.0
    return float(np.sum(p[keep] * (log_p[keep] - log_q[keep])) * truth.cell_volume)
