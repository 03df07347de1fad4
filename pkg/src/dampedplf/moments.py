"""Gaussian moment approximations of a measurement function.

Each backend computes the predicted measurement mean, the state-measurement
cross covariance and the measurement covariance of ``h(x)`` for
``x ~ N(mean, cov)``. Backends also expose :meth:`MomentBackend.evaluator`,
which freezes the covariance: sigma-point offsets (or Monte Carlo draws) are
factorized once and reused for every mean evaluated afterwards. The damped
filter's inner loop depends on this.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from .exceptions import MissingMomentsError
from .gaussian import GaussianState, cholesky, ensure_spd

if TYPE_CHECKING:
    from .models import MeasurementModel

DEFAULT_MC_SAMPLES = 100_000


@dataclass(frozen=True, eq=False)
class Moments:
    """Moments of ``h(x)`` under a Gaussian.

    Attributes:
        yhat: predicted measurement mean, shape ``(d,)``.
        cross_cov: ``Cov(x, h(x))``, shape ``(n, d)``.
        meas_cov: ``Cov(h(x))``, shape ``(d, d)``.
    """

    yhat: np.ndarray
    cross_cov: np.ndarray
    meas_cov: np.ndarray

    def __post_init__(self):
        yhat = np.asarray(self.yhat, dtype=float).reshape(-1)
        d = yhat.size
        cross = np.asarray(self.cross_cov, dtype=float).reshape(-1, d)
        meas = np.asarray(self.meas_cov, dtype=float).reshape(d, d)
        object.__setattr__(self, "yhat", yhat)
        object.__setattr__(self, "cross_cov", cross)
        object.__setattr__(self, "meas_cov", 0.5 * (meas + meas.T))


@dataclass(frozen=True, eq=False)
class SigmaPointSet:
    """Offsets from the mean and their weights.

    Attributes:
        deltas: ``(m, n)`` translations from the mean.
        weights_mean: ``(m,)`` weights for the mean.
        weights_cov: ``(m,)`` weights for (cross) covariances.
    """

    deltas: np.ndarray
    weights_mean: np.ndarray
    weights_cov: np.ndarray

    @property
    def size(self) -> int:
        return self.deltas.shape[0]


def _weighted_moments(model: "MeasurementModel", mean: np.ndarray, points: SigmaPointSet) -> Moments:
    values = np.asarray(model.h(mean + points.deltas), dtype=float).reshape(points.size, model.meas_dim)
    # offset by one sample: the unscented weights are O(1/alpha^2) with mixed signs
    ref = values[0]
    yhat = ref + points.weights_mean @ (values - ref)
    resid = values - yhat
    weighted = resid * points.weights_cov[:, None]
    return Moments(
        yhat=yhat,
        cross_cov=points.deltas.T @ weighted,
        meas_cov=resid.T @ weighted,
    )


def unscented_points(g: GaussianState, alpha: float = 1e-3, beta: float = 2.0, kappa: float = 0.0) -> SigmaPointSet:
    """Scaled unscented sigma points (2n + 1 of them)."""
    n = g.dim
    lam = alpha**2 * (n + kappa) - n
    root = np.sqrt(n + lam) * cholesky(ensure_spd(g.cov))
    deltas = np.vstack([np.zeros(n), root.T, -root.T])
    wm = np.full(2 * n + 1, 0.5 / (n + lam))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + 1.0 - alpha**2 + beta
    return SigmaPointSet(deltas, wm, wc)


def cubature_points(g: GaussianState) -> SigmaPointSet:
    """Third-degree spherical-radial cubature points (2n of them)."""
    n = g.dim
    root = np.sqrt(n) * cholesky(ensure_spd(g.cov))
    deltas = np.vstack([root.T, -root.T])
    w = np.full(2 * n, 1.0 / (2 * n))
    return SigmaPointSet(deltas, w, w.copy())


def sigma_points(g: GaussianState, scheme: str = "cubature", **kwargs) -> SigmaPointSet:
    """Sigma points for ``scheme`` in ``{"unscented", "cubature"}``."""
    scheme = scheme.lower()
    if scheme in ("unscented", "ukf"):
        return unscented_points(g, **kwargs)
    if scheme in ("cubature", "cubature3", "ckf"):
        return cubature_points(g)
    raise ValueError(f"unknown sigma-point scheme {scheme!r}")


class MomentBackend:
    """Base class; subclasses implement :meth:`evaluator`."""

    name = "base"

    def evaluator(self, model: "MeasurementModel", cov) -> Callable[[np.ndarray], Moments]:
        """Return ``mean -> Moments`` with the covariance held fixed."""
        raise NotImplementedError

    def moments(self, model: "MeasurementModel", g: GaussianState) -> Moments:
        return self.evaluator(model, g.cov)(g.mean)

    def get_params(self) -> dict:
        return {}

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


class TaylorBackend(MomentBackend):
    """First-order Taylor expansion at the mean (EKF moments)."""

    name = "ekf"

    def evaluator(self, model, cov):
        from .models import evaluate, jacobian

        cov = np.asarray(cov, dtype=float)

        def at(mean):
            jac = jacobian(model, mean)
            cross = cov @ jac.T
            return Moments(yhat=evaluate(model, mean), cross_cov=cross, meas_cov=jac @ cross)

        return at


class SigmaPointBackend(MomentBackend):
    """Deterministic sigma-point quadrature."""

    def points(self, g: GaussianState) -> SigmaPointSet:
        raise NotImplementedError

    def evaluator(self, model, cov):
        n = model.state_dim
        points = self.points(GaussianState(np.zeros(n), cov))
        return lambda mean: _weighted_moments(model, np.asarray(mean, dtype=float).reshape(n), points)


class UnscentedBackend(SigmaPointBackend):
    """Scaled unscented transform with parameters ``(alpha, beta, kappa)``."""

    name = "ukf"

    def __init__(self, alpha: float = 1e-3, beta: float = 2.0, kappa: float = 0.0):
        self.alpha = alpha
        self.beta = beta
        self.kappa = kappa

    def points(self, g):
        return unscented_points(g, self.alpha, self.beta, self.kappa)

    def get_params(self):
        return {"alpha": self.alpha, "beta": self.beta, "kappa": self.kappa}


class CubatureBackend(SigmaPointBackend):
    name = "ckf"

    def points(self, g):
        return cubature_points(g)


class MonteCarloBackend(MomentBackend):
    """Sample-average moments from a seeded counter-based generator.

    The standard-normal draws depend only on ``seed``, so every evaluation
    uses the same underlying samples (common random numbers). This keeps
    ``yhat(mean)`` a deterministic, smooth function of the mean.
    """

    name = "mc"

    def __init__(self, sample_count: int = DEFAULT_MC_SAMPLES, seed: int = 0):
        if sample_count < 2:
            raise ValueError("sample_count must be at least 2")
        self.sample_count = int(sample_count)
        self.seed = int(seed)
        self._normals = {}

    def standard_normals(self, n: int) -> np.ndarray:
        if n not in self._normals:
            rng = np.random.Generator(np.random.Philox(self.seed))
            z = rng.standard_normal((self.sample_count, n))
            z.setflags(write=False)
            self._normals[n] = z
        return self._normals[n]

    def evaluator(self, model, cov):
        n = model.state_dim
        root = cholesky(ensure_spd(cov))
        w = np.full(self.sample_count, 1.0 / self.sample_count)
        points = SigmaPointSet(self.standard_normals(n) @ root.T, w, w)
        return lambda mean: _weighted_moments(model, np.asarray(mean, dtype=float).reshape(n), points)

    def get_params(self):
        return {"sample_count": self.sample_count, "seed": self.seed}


class ExactBackend(MomentBackend):
    """Delegates to the model's closed-form moments."""

    name = "exact"

    def evaluator(self, model, cov):
        if model.exact_moments is None:
            raise MissingMomentsError(f"model {model.name!r} has no exact moments")
        cov = np.asarray(cov, dtype=float)
        return lambda mean: model.exact_moments(GaussianState(mean, cov))


BACKENDS = {
    "ekf": TaylorBackend,
    "taylor": TaylorBackend,
    "ukf": UnscentedBackend,
    "unscented": UnscentedBackend,
    "ckf": CubatureBackend,
    "cubature": CubatureBackend,
    "cubature3": CubatureBackend,
    "mc": MonteCarloBackend,
    "montecarlo": MonteCarloBackend,
    "exact": ExactBackend,
}


def make_backend(backend="ckf", **params) -> MomentBackend:
    """Resolve a backend instance from a name (or pass an instance through)."""
    if isinstance(backend, MomentBackend):
        if params:
            raise ValueError("parameters cannot be given together with a backend instance")
        return backend
    try:
        cls = BACKENDS[str(backend).lower()]
    except KeyError:
        raise ValueError(f"unknown backend {backend!r}; expected one of {sorted(set(BACKENDS))}") from None
    return cls(**params)


def compute_moments(backend, model: "MeasurementModel", g: GaussianState) -> Moments:
    """Moments of ``h(x)`` for ``x ~ g`` under the given backend."""
    return make_backend(backend).moments(model, g)
