"""Nonlinear Kalman measurement updates.

All functions take a Gaussian prior, a :class:`~dampedplf.models.MeasurementModel`
and a measurement, and return an :class:`UpdateResult` holding the posterior
plus a per-iteration :class:`UpdateTrace`.

Implemented updates:

* :func:`ggf_update` - one-shot moment-matching update (EKF/UKF/CKF/...).
* :func:`iplf_update` - iterated posterior linearization.
* :func:`iekf_update` - iterated EKF (Gauss-Newton on the MAP cost).
* :func:`damped_iekf_update` - iterated EKF with backtracking line search.
* :func:`ruf_update` - recursive update with inflated noise.
* :func:`diplf_update` - damped posterior linearization with nested
  mean (inner) and covariance (outer) loops.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, List, NamedTuple, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import SingularCovarianceError
from .gaussian import LOG_2PI, GaussianState, ensure_spd, kld_gaussian
from .models import MeasurementModel, evaluate, jacobian
from .moments import make_backend
from .slr import LinearizedModel, precision, slr_from_moments
from .validation import check_gaussian, check_observation, check_positive_int


@dataclass(frozen=True)
class DiplfParams:
    """Tuning parameters shared by the iterated updates.

    Attributes:
        tau: step-length reduction factor of the backtracking line search.
        beta: inner loop continues while the cost shrinks below ``beta`` times
            its previous value.
        alpha_min: line search gives up once the step length drops below this.
        outer_gain_factor: outer loop stops when ``outer_gain_factor`` times
            the new objective (probability domain) does not exceed the old one.
        max_inner, max_outer: iteration caps of the damped filter.
        iplf_kld_threshold: IPLF/IEKF stop when the KLD between consecutive
            estimates drops below this.
        iplf_max_iter: iteration cap of IPLF/IEKF/damped IEKF.
        outer_criterion: ``"product"`` compares the full product
            ``N(yhat | y, R + omega) N(mu | mu0, P0)``; ``"likelihood"`` only
            the first factor.
        single_inner: run exactly one inner step per outer round.
        pin_alpha: always take the full step (disables damping).
    """

    tau: float = 0.5
    beta: float = 0.9
    alpha_min: float = 2.0**-4
    outer_gain_factor: float = 0.999
    max_inner: int = 20
    max_outer: int = 30
    iplf_kld_threshold: float = 1e-8
    iplf_max_iter: int = 50
    outer_criterion: str = "product"
    single_inner: bool = False
    pin_alpha: bool = False

    def __post_init__(self):
        for name in ("tau", "beta", "outer_gain_factor"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        for name in ("alpha_min", "iplf_kld_threshold"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_inner", "max_outer", "iplf_max_iter"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.outer_criterion not in ("product", "likelihood"):
            raise ValueError(f"outer_criterion must be 'product' or 'likelihood', got {self.outer_criterion!r}")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class TraceEntry:
    state: GaussianState
    cost: Optional[float] = None
    alpha: Optional[float] = None
    log_objective: Optional[float] = None
    inner: int = 0
    outer: int = 0
    kind: str = "iterate"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["state"] = self.state.to_dict()
        return out


@dataclass
class UpdateTrace:
    """Iterates visited by an update, in order."""

    iterates: List[TraceEntry] = field(default_factory=list)
    accepted_index: int = 0
    diverged: bool = False

    def append(self, entry: TraceEntry) -> int:
        self.iterates.append(entry)
        return len(self.iterates) - 1

    @property
    def means(self) -> np.ndarray:
        return np.array([e.state.mean for e in self.iterates])

    def of_kind(self, kind: str) -> List[TraceEntry]:
        return [e for e in self.iterates if e.kind == kind]

    def to_dict(self) -> dict:
        return {
            "accepted_index": self.accepted_index,
            "diverged": self.diverged,
            "iterates": [e.to_dict() for e in self.iterates],
        }


@dataclass
class UpdateResult:
    posterior: GaussianState
    trace: UpdateTrace

    @property
    def n_iter(self) -> int:
        return len(self.trace.iterates)


class LineSearchResult(NamedTuple):
    """Outcome of :func:`line_search`; ``alpha is None`` is the give-up sentinel."""

    alpha: Optional[float]
    mean: np.ndarray
    cost: float

    @property
    def ok(self) -> bool:
        return self.alpha is not None


# -- shared algebra ---------------------------------------------------------


def _cho(m):
    try:
        return cho_factor(m, lower=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularCovarianceError(f"innovation covariance is singular: {exc}") from exc


def _gain(prior_cov, J, noise):
    """Innovation covariance and Kalman gain for a linear(ized) measurement."""
    PJt = prior_cov @ J.T
    S = J @ PJt + noise
    K = cho_solve(_cho(S), PJt.T).T
    return S, K


def _linear_update(prior: GaussianState, lin: LinearizedModel, R, y) -> GaussianState:
    S, K = _gain(prior.cov, lin.J, R + lin.omega)
    mean = prior.mean + K @ (y - lin.J @ prior.mean - lin.b)
    return GaussianState(mean, ensure_spd(prior.cov - K @ S @ K.T))


def _log_normal(r: np.ndarray, factor) -> float:
    """log N(r; 0, C) for a Cholesky factor of C."""
    z = cho_solve(factor, r)
    return float(-0.5 * (r.size * LOG_2PI + r @ z) - np.sum(np.log(np.diag(factor[0]))))


# -- one-shot updates ---------------------------------------------------------


def ggf_update(prior, model: MeasurementModel, obs, backend="ckf") -> UpdateResult:
    """Moment-matching update with moments taken in the prior."""
    prior = check_gaussian(prior, model)
    y = check_observation(obs, model)
    m = make_backend(backend).moments(model, prior)
    S = m.meas_cov + model.noise_cov
    K = cho_solve(_cho(S), m.cross_cov.T).T
    post = GaussianState(prior.mean + K @ (y - m.yhat), ensure_spd(prior.cov - K @ S @ K.T))
    trace = UpdateTrace()
    trace.append(TraceEntry(post, inner=1, outer=1))
    return UpdateResult(post, trace)


def ruf_update(prior, model: MeasurementModel, obs, backend="ckf", n_steps: int = 10) -> UpdateResult:
    """Apply the measurement in ``n_steps`` relinearized updates with noise ``n_steps * R``."""
    n_steps = check_positive_int(n_steps, "n_steps")
    prior = check_gaussian(prior, model)
    y = check_observation(obs, model)
    be = make_backend(backend)
    noise = n_steps * model.noise_cov
    state = prior
    trace = UpdateTrace()
    for k in range(n_steps):
        m = be.moments(model, state)
        S = m.meas_cov + noise
        K = cho_solve(_cho(S), m.cross_cov.T).T
        state = GaussianState(state.mean + K @ (y - m.yhat), ensure_spd(state.cov - K @ S @ K.T))
        trace.append(TraceEntry(state, inner=k + 1, outer=k + 1))
    trace.accepted_index = len(trace.iterates) - 1
    return UpdateResult(state, trace)


# -- iterated updates --------------------------------------------------------


def iplf_update(prior, model: MeasurementModel, obs, backend="ckf", params: DiplfParams = None) -> UpdateResult:
    """Iterated posterior linearization.

    Each iteration linearizes ``h`` by SLR with respect to the current
    estimate and applies the linearized model to the prior. Stops when the
    KLD between consecutive estimates falls below
    ``params.iplf_kld_threshold``; hitting ``params.iplf_max_iter`` instead
    marks the trace as diverged.
    """
    params = params or DiplfParams()
    prior = check_gaussian(prior, model)
    y = check_observation(obs, model)
    be = make_backend(backend)
    trace = UpdateTrace(diverged=True)
    state = prior
    for it in range(1, params.iplf_max_iter + 1):
        lin = slr_from_moments(be.moments(model, state), state)
        new = _linear_update(prior, lin, model.noise_cov, y)
        trace.append(TraceEntry(new, alpha=1.0, inner=it, outer=it))
        converged = kld_gaussian(new, state) < params.iplf_kld_threshold
        state = new
        if converged:
            trace.diverged = False
            break
    trace.accepted_index = len(trace.iterates) - 1
    return UpdateResult(state, trace)


def map_cost(mu, prior: GaussianState, model: MeasurementModel, obs) -> float:
    """MAP cost ``0.5 |h(mu) - y|^2_{R^-1} + 0.5 |mu - mu0|^2_{P0^-1}``."""
    y = check_observation(obs, model)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    r = evaluate(model, mu) - y
    dx = mu - prior.mean
    return 0.5 * float(r @ np.linalg.solve(model.noise_cov, r) + dx @ np.linalg.solve(prior.cov, dx))


def _iekf_iterate(prior, model, y, mu):
    """Linearize at `mu`; return (proposal, covariance at `mu`)."""
    J = jacobian(model, mu)
    S, K = _gain(prior.cov, J, model.noise_cov)
    proposal = prior.mean + K @ (y - evaluate(model, mu) - J @ (prior.mean - mu))
    return proposal, ensure_spd(prior.cov - K @ S @ K.T)


def _iterated_ekf(prior, model, obs, params, damped, initial_mean=None):
    prior = check_gaussian(prior, model)
    y = check_observation(obs, model)
    cost = lambda m: map_cost(m, prior, model, y)  # noqa: E731
    trace = UpdateTrace(diverged=True)
    mu = prior.mean if initial_mean is None else np.asarray(initial_mean, dtype=float).reshape(prior.dim)
    proposal, cov = _iekf_iterate(prior, model, y, mu)
    previous = GaussianState(mu, cov)
    q = cost(mu)
    for it in range(1, params.iplf_max_iter + 1):
        if damped and not params.pin_alpha:
            ls = line_search(cost, mu, proposal, params, q)
            if not ls.ok:
                trace.diverged = False
                break
            alpha, mu, q = ls
        else:
            alpha, mu = 1.0, proposal
            q = cost(mu)
        proposal, cov = _iekf_iterate(prior, model, y, mu)
        state = GaussianState(mu, cov)
        trace.append(TraceEntry(state, cost=q, alpha=alpha, inner=it, outer=it))
        converged = kld_gaussian(state, previous) < params.iplf_kld_threshold
        previous = state
        if converged:
            trace.diverged = False
            break
    if not trace.iterates:
        trace.append(TraceEntry(previous, cost=q, alpha=0.0))
    trace.accepted_index = len(trace.iterates) - 1
    return UpdateResult(trace.iterates[-1].state, trace)


def iekf_update(prior, model: MeasurementModel, obs, params: DiplfParams = None, initial_mean=None) -> UpdateResult:
    """Iterated EKF; the covariance comes from the linearization at the final mean.

    The first linearization point is the prior mean unless `initial_mean` is given.
    """
    return _iterated_ekf(prior, model, obs, params or DiplfParams(), damped=False, initial_mean=initial_mean)


def damped_iekf_update(prior, model: MeasurementModel, obs, params: DiplfParams = None, initial_mean=None) -> UpdateResult:
    """Iterated EKF whose steps are shortened until the MAP cost decreases.

    Stops when the line search gives up, when consecutive estimates agree
    (KLD threshold) or at ``params.iplf_max_iter``.
    """
    return _iterated_ekf(prior, model, obs, params or DiplfParams(), damped=True, initial_mean=initial_mean)


def line_search(cost: Callable[[np.ndarray], float], mu_current, mu_proposal, params: DiplfParams = None, cost_current=None) -> LineSearchResult:
    """Backtracking search along the segment from `mu_current` to `mu_proposal`.

    Tries ``alpha = 1, tau, tau**2, ...`` and returns the first step whose
    cost is strictly below the current cost. Once alpha falls below
    ``params.alpha_min`` the sentinel ``alpha=None`` is returned together
    with the unchanged mean.
    """
    params = params or DiplfParams()
    mu_current = np.asarray(mu_current, dtype=float)
    mu_proposal = np.asarray(mu_proposal, dtype=float)
    if cost_current is None:
        cost_current = cost(mu_current)
    alpha = 1.0
    while alpha >= params.alpha_min:
        candidate = (1.0 - alpha) * mu_current + alpha * mu_proposal
        try:
            value = cost(candidate)
        except (SingularCovarianceError, ValueError):
            value = math.inf
        if value < cost_current:
            return LineSearchResult(alpha, candidate, float(value))
        alpha *= params.tau
    return LineSearchResult(None, mu_current, float(cost_current))


class _FixedCovCost:
    """Inner-loop cost with the covariance and omega frozen.

    Caches the moments of the last evaluated mean so an accepted line-search
    step does not recompute them.
    """

    def __init__(self, evaluator, prior: GaussianState, prior_prec, noise, y):
        self.evaluator = evaluator
        self.prior = prior
        self.prior_prec = prior_prec
        self.factor = _cho(noise)
        self.y = y
        self._last = (None, None)

    def moments(self, mu):
        key, m = self._last
        if key is not None and np.array_equal(key, mu):
            return m
        m = self.evaluator(mu)
        self._last = (np.array(mu, copy=True), m)
        return m

    def from_yhat(self, yhat, mu) -> float:
        r = yhat - self.y
        dx = mu - self.prior.mean
        return 0.5 * float(r @ cho_solve(self.factor, r) + dx @ self.prior_prec @ dx)

    def __call__(self, mu) -> float:
        mu = np.asarray(mu, dtype=float)
        return self.from_yhat(self.moments(mu).yhat, mu)


def cost_q(mu, fixed_cov, omega, prior, model: MeasurementModel, obs, backend="ckf") -> float:
    """Inner-loop cost of the damped filter.

    ``0.5 |yhat(mu) - y|^2_{(R+omega)^-1} + 0.5 |mu - mu0|^2_{P0^-1}`` where
    ``yhat(mu)`` is the predicted measurement under ``N(mu, fixed_cov)``.
    """
    prior = check_gaussian(prior, model)
    y = check_observation(obs, model)
    ev = make_backend(backend).evaluator(model, np.atleast_2d(fixed_cov))
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    return _FixedCovCost(ev, prior, precision(prior.cov), model.noise_cov + omega, y)(np.asarray(mu, dtype=float).reshape(-1))


def log_objective(yhat, mu, y, noise, prior: GaussianState, prior_prec=None, criterion="product") -> float:
    """``log N(yhat | y, noise) + log N(mu | mu0, P0)`` (first term only for ``"likelihood"``)."""
    value = _log_normal(np.asarray(yhat) - y, _cho(noise))
    if criterion == "product":
        value += _log_normal(np.asarray(mu) - prior.mean, _cho(prior.cov))
    return value


def diplf_update(prior, model: MeasurementModel, obs, backend="ckf", params: DiplfParams = None) -> UpdateResult:
    """Damped iterated posterior linearization.

    The inner loop minimizes the SLR cost over the mean with a damped
    Gauss-Newton iteration while the covariance and the linearization-error
    covariance stay fixed. The outer loop refreshes both and keeps going as
    long as ``N(yhat | y, R + omega) N(mu | mu0, P0)`` increases by more than
    the factor ``1 / outer_gain_factor``. The round with the highest value of
    that objective is returned (earliest on ties).
    """
    params = params or DiplfParams()
    prior = check_gaussian(prior, model)
    y = check_observation(obs, model)
    be = make_backend(backend)
    R = model.noise_cov
    prior_prec = precision(prior.cov)
    log_gain = math.log(params.outer_gain_factor)

    def linearize(mu, cov, evaluator):
        m = evaluator(mu)
        return m, slr_from_moments(m, GaussianState(mu, cov))

    mu, cov = prior.mean, prior.cov
    evaluator = be.evaluator(model, cov)
    m, lin = linearize(mu, cov, evaluator)
    J, omega, yhat = lin.J, lin.omega, m.yhat

    trace = UpdateTrace()
    obj = log_objective(yhat, mu, y, R + omega, prior, criterion=params.outer_criterion)
    best_obj = obj
    trace.accepted_index = trace.append(TraceEntry(GaussianState(mu, cov), log_objective=obj, kind="outer"))
    i = 0
    trace.diverged = True
    for j in range(1, params.max_outer + 1):
        noise = R + omega
        cost = _FixedCovCost(evaluator, prior, prior_prec, noise, y)
        q = cost.from_yhat(yhat, mu)
        for n_inner in range(1, params.max_inner + 1):
            J_used = J
            _, K = _gain(prior.cov, J, noise)
            proposal = prior.mean + K @ (y - J @ prior.mean - (yhat - J @ mu))
            if params.pin_alpha:
                step = LineSearchResult(1.0, proposal, cost(proposal))
            else:
                step = line_search(cost, mu, proposal, params, q)
                if not step.ok:
                    break
            i += 1
            q_prev = q
            alpha, mu, q = step
            m = cost.moments(mu)
            J = slr_from_moments(m, GaussianState(mu, cov)).J
            yhat = m.yhat
            trace.append(TraceEntry(GaussianState(mu, cov), cost=q, alpha=alpha, inner=i, outer=j - 1, kind="inner"))
            if params.single_inner or not q < params.beta * q_prev:
                break

        S, K = _gain(prior.cov, J_used, noise)
        cov = ensure_spd(prior.cov - K @ S @ K.T)
        evaluator = be.evaluator(model, cov)
        m, lin = linearize(mu, cov, evaluator)
        J, omega, yhat = lin.J, lin.omega, m.yhat
        new_obj = log_objective(yhat, mu, y, R + omega, prior, criterion=params.outer_criterion)
        idx = trace.append(TraceEntry(GaussianState(mu, cov), log_objective=new_obj, inner=i, outer=j, kind="outer"))
        if new_obj > best_obj:
            best_obj = new_obj
            trace.accepted_index = idx
        if not new_obj + log_gain > obj:
            trace.diverged = False
            break
        obj = new_obj
    return UpdateResult(trace.iterates[trace.accepted_index].state, trace)


FILTERS = {
    "ggf": ggf_update,
    "iplf": iplf_update,
    "iekf": iekf_update,
    "damped_iekf": damped_iekf_update,
    "ruf": ruf_update,
    "diplf": diplf_update,
}
