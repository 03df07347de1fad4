"""Additive-Gaussian measurement models ``y = h(x) + e, e ~ N(0, R)``.

Every measurement function is expected to be vectorized: it maps an array of
shape ``(..., n)`` to ``(..., d)``. Sample-based moment backends rely on this
to evaluate ``h`` on all points in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import DimensionError, SingularGeometryError
from .gaussian import GaussianState, cholesky
from .moments import Moments

DEFAULT_BEACONS = ((-1.0, 0.0), (0.0, 1.0), (1.0, -2.0))
FD_RELATIVE_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """Measurement function plus additive noise covariance.

    Attributes:
        h: vectorized measurement function ``(..., n) -> (..., d)``.
        noise_cov: ``d x d`` SPD noise covariance R.
        state_dim: n.
        meas_dim: d.
        analytic_jacobian: optional ``x -> (d, n)`` derivative of ``h``.
        exact_moments: optional ``GaussianState -> Moments`` closed form.
        name: short identifier used in configs and reports.
        params: JSON-serializable construction parameters.
    """

    h: Callable[[np.ndarray], np.ndarray]
    noise_cov: np.ndarray
    state_dim: int
    meas_dim: int
    analytic_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_moments: Optional[Callable[[GaussianState], Moments]] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        if r.shape != (self.meas_dim, self.meas_dim):
            raise DimensionError(f"noise covariance shape {r.shape} != ({self.meas_dim}, {self.meas_dim})")
        if not np.allclose(r, r.T, rtol=1e-12, atol=0.0):
            raise ValueError("noise covariance must be symmetric")
        cholesky(r)
        r.setflags(write=False)
        object.__setattr__(self, "noise_cov", r)

    @property
    def R(self) -> np.ndarray:
        return self.noise_cov


@dataclass(frozen=True)
class Observation:
    """A realized measurement vector."""

    y: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    def check(self, model: MeasurementModel) -> "Observation":
        if self.y.size != model.meas_dim:
            raise DimensionError(f"observation has length {self.y.size}, model expects {model.meas_dim}")
        return self


def as_observation(y, model: MeasurementModel) -> Observation:
    obs = y if isinstance(y, Observation) else Observation(y)
    return obs.check(model)


def _check_state(model: MeasurementModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != model.state_dim:
        raise DimensionError(f"state has length {x.size}, model expects {model.state_dim}")
    return x


def evaluate(model: MeasurementModel, x) -> np.ndarray:
    """Noiseless measurement ``h(x)``."""
    x = _check_state(model, x)
    return np.asarray(model.h(x), dtype=float).reshape(model.meas_dim)


def numerical_jacobian(model: MeasurementModel, x) -> np.ndarray:
    """Central-difference Jacobian with step ``1e-6 * max(1, |x_k|)``."""
    x = _check_state(model, x)
    steps = FD_RELATIVE_STEP * np.maximum(1.0, np.abs(x))
    shifts = np.diag(steps)
    points = np.concatenate([x + shifts, x - shifts])
    values = np.asarray(model.h(points), dtype=float).reshape(2 * x.size, model.meas_dim)
    n = x.size
    return ((values[:n] - values[n:]) / (2.0 * steps[:, None])).T


def jacobian(model: MeasurementModel, x) -> np.ndarray:
    """``d x n`` derivative of ``h`` at `x`; analytic when the model provides it."""
    x = _check_state(model, x)
    if model.analytic_jacobian is not None:
        jac = np.asarray(model.analytic_jacobian(x), dtype=float)
        return jac.reshape(model.meas_dim, model.state_dim)
    return numerical_jacobian(model, x)


# -- built-in models --------------------------------------------------------


def arctan_model(noise_var: float = 1e-4) -> MeasurementModel:
    """Scalar ``h(x) = arctan(x)``."""

    def h(x):
        return np.arctan(np.asarray(x, dtype=float))

    def jac(x):
        return np.array([[1.0 / (1.0 + x[0] ** 2)]])

    return MeasurementModel(
        h=h,
        noise_cov=[[noise_var]],
        state_dim=1,
        meas_dim=1,
        analytic_jacobian=jac,
        name="arctan",
        params={"noise_var": noise_var},
    )


def _quadratic_moments(g: GaussianState) -> Moments:
    mu = g.mean[0]
    p = g.cov[0, 0]
    return Moments(
        yhat=np.array([mu * mu + p]),
        cross_cov=np.array([[2.0 * mu * p]]),
        meas_cov=np.array([[4.0 * mu * mu * p + 2.0 * p * p]]),
    )


def quadratic_model(noise_var: float = 4.0) -> MeasurementModel:
    """Scalar ``h(x) = x**2`` with closed-form Gaussian moments.

    For ``x ~ N(mu, P)``: ``E[x^2] = mu^2 + P``, ``Cov(x, x^2) = 2 mu P`` and
    ``Var(x^2) = 4 mu^2 P + 2 P^2``.
    """

    def h(x):
        return np.asarray(x, dtype=float) ** 2

    def jac(x):
        return np.array([[2.0 * x[0]]])

    return MeasurementModel(
        h=h,
        noise_cov=[[noise_var]],
        state_dim=1,
        meas_dim=1,
        analytic_jacobian=jac,
        exact_moments=_quadratic_moments,
        name="quadratic",
        params={"noise_var": noise_var},
    )


def range_model(beacons=DEFAULT_BEACONS, noise_cov=None) -> MeasurementModel:
    """Euclidean distances from a 2-D (or n-D) position to fixed beacons."""
    beacons = np.atleast_2d(np.asarray(beacons, dtype=float))
    d, n = beacons.shape
    r = np.eye(d) if noise_cov is None else np.atleast_2d(np.asarray(noise_cov, dtype=float))

    def h(x):
        x = np.asarray(x, dtype=float)
        # per-coordinate accumulation; a reduction over the short last axis is slow
        acc = (x[..., 0, None] - beacons[:, 0]) ** 2
        for k in range(1, n):
            acc += (x[..., k, None] - beacons[:, k]) ** 2
        return np.sqrt(acc)

    def jac(x):
        diff = x[None, :] - beacons
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        if np.any(dist == 0.0):
            raise SingularGeometryError("range Jacobian undefined at a beacon location")
        return diff / dist[:, None]

    return MeasurementModel(
        h=h,
        noise_cov=r,
        state_dim=n,
        meas_dim=d,
        analytic_jacobian=jac,
        name="range",
        params={"beacons": beacons.tolist(), "noise_cov": r.tolist()},
    )


def linear_model(H, c=None, noise_cov=None) -> MeasurementModel:
    """Affine ``h(x) = H x + c``; every moment backend is exact for it."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    d, n = H.shape
    c = np.zeros(d) if c is None else np.asarray(c, dtype=float).reshape(d)
    r = np.eye(d) if noise_cov is None else np.atleast_2d(np.asarray(noise_cov, dtype=float))

    def h(x):
        return np.asarray(x, dtype=float) @ H.T + c

    def moments(g: GaussianState) -> Moments:
        return Moments(yhat=H @ g.mean + c, cross_cov=g.cov @ H.T, meas_cov=H @ g.cov @ H.T)

    return MeasurementModel(
        h=h,
        noise_cov=r,
        state_dim=n,
        meas_dim=d,
        analytic_jacobian=lambda x: H.copy(),
        exact_moments=moments,
        name="linear",
        params={"H": H.tolist(), "c": c.tolist(), "noise_cov": r.tolist()},
    )


MODEL_FACTORIES = {
    "arctan": arctan_model,
    "quadratic": quadratic_model,
    "range": range_model,
    "linear": linear_model,
}


def make_model(name: str, **params) -> MeasurementModel:
    """Build a built-in model by name."""
    try:
        factory = MODEL_FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; expected one of {sorted(MODEL_FACTORIES)}") from None
    return factory(**params)
