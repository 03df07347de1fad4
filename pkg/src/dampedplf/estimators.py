"""Estimator-style wrappers around the update functions.

Hyperparameters live in ``__init__`` and are exposed through
``get_params``/``set_params`` (inherited from scikit-learn's
``BaseEstimator``), so filters can be cloned, swept over and logged like any
other estimator. ``fit(prior, model, y)`` runs the update and stores the
result in trailing-underscore attributes; ``update`` returns it directly.

    >>> from dampedplf import DIPLF, GaussianState, arctan_model
    >>> f = DIPLF(backend="ukf").fit(GaussianState([2.75], [[1.0]]), arctan_model(), [0.0])
    >>> round(float(f.posterior_.mean[0]), 3)
    0.0
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from . import filters as F
from .moments import make_backend
from .validation import check_gaussian, check_observation


class MeasurementUpdater(BaseEstimator):
    """Base class. Subclasses implement ``_run(prior, model, y)``."""

    def _backend(self):
        backend = getattr(self, "backend", "ekf")
        return make_backend(backend, **(getattr(self, "backend_params", None) or {}))

    def _diplf_params(self, **overrides) -> F.DiplfParams:
        names = set(F.DiplfParams.field_names())
        values = {k: v for k, v in self.get_params().items() if k in names}
        values.update(overrides)
        return F.DiplfParams(**values)

    def _run(self, prior, model, y) -> F.UpdateResult:
        raise NotImplementedError

    def update(self, prior, model, y) -> F.UpdateResult:
        """Run the measurement update and return the full result."""
        prior = check_gaussian(prior, model)
        y = check_observation(y, model)
        result = self._run(prior, model, y)
        self.posterior_ = result.posterior
        self.trace_ = result.trace
        self.n_iter_ = result.n_iter
        self.diverged_ = result.trace.diverged
        return result

    def fit(self, prior, model, y):
        self.update(prior, model, y)
        return self


class GGF(MeasurementUpdater):
    """One-shot Gaussian filter; the backend decides EKF/UKF/CKF/MC flavour."""

    def __init__(self, backend="ckf", backend_params=None):
        self.backend = backend
        self.backend_params = backend_params

    def _run(self, prior, model, y):
        return F.ggf_update(prior, model, y, self._backend())


class RUF(MeasurementUpdater):
    def __init__(self, backend="ckf", backend_params=None, n_steps=10):
        self.backend = backend
        self.backend_params = backend_params
        self.n_steps = n_steps

    def _run(self, prior, model, y):
        return F.ruf_update(prior, model, y, self._backend(), self.n_steps)


class IPLF(MeasurementUpdater):
    def __init__(self, backend="ckf", backend_params=None, iplf_kld_threshold=1e-8, iplf_max_iter=50):
        self.backend = backend
        self.backend_params = backend_params
        self.iplf_kld_threshold = iplf_kld_threshold
        self.iplf_max_iter = iplf_max_iter

    def _run(self, prior, model, y):
        return F.iplf_update(prior, model, y, self._backend(), self._diplf_params())


class IEKF(MeasurementUpdater):
    def __init__(self, iplf_kld_threshold=1e-8, iplf_max_iter=50):
        self.iplf_kld_threshold = iplf_kld_threshold
        self.iplf_max_iter = iplf_max_iter

    def _run(self, prior, model, y):
        return F.iekf_update(prior, model, y, self._diplf_params())


class DampedIEKF(MeasurementUpdater):
    def __init__(self, tau=0.5, alpha_min=2.0**-4, iplf_kld_threshold=1e-8, iplf_max_iter=50, pin_alpha=False):
        self.tau = tau
        self.alpha_min = alpha_min
        self.iplf_kld_threshold = iplf_kld_threshold
        self.iplf_max_iter = iplf_max_iter
        self.pin_alpha = pin_alpha

    def _run(self, prior, model, y):
        return F.damped_iekf_update(prior, model, y, self._diplf_params())


class DIPLF(MeasurementUpdater):
    """Damped iterated posterior linearization filter.

    See :func:`dampedplf.filters.diplf_update` for the algorithm and
    :class:`dampedplf.filters.DiplfParams` for the meaning of each parameter.
    """

    def __init__(
        self,
        backend="ckf",
        backend_params=None,
        tau=0.5,
        beta=0.9,
        alpha_min=2.0**-4,
        outer_gain_factor=0.999,
        max_inner=20,
        max_outer=30,
        outer_criterion="product",
        single_inner=False,
        pin_alpha=False,
    ):
        self.backend = backend
        self.backend_params = backend_params
        self.tau = tau
        self.beta = beta
        self.alpha_min = alpha_min
        self.outer_gain_factor = outer_gain_factor
        self.max_inner = max_inner
        self.max_outer = max_outer
        self.outer_criterion = outer_criterion
        self.single_inner = single_inner
        self.pin_alpha = pin_alpha

    def _run(self, prior, model, y):
        return F.diplf_update(prior, model, y, self._backend(), self._diplf_params())


ESTIMATORS = {
    "ggf": GGF,
    "ruf": RUF,
    "iplf": IPLF,
    "iekf": IEKF,
    "damped_iekf": DampedIEKF,
    "diplf": DIPLF,
}
ALIASES = {"dplf": "diplf", "ekf": "ggf", "ikf": "iekf", "damped_ikf": "damped_iekf"}


def make_filter(name: str, backend=None, params: F.DiplfParams = None, ruf_steps: int = 10) -> MeasurementUpdater:
    """Instantiate a filter by name with shared parameters.

    Parameters that the chosen filter does not take are ignored, so one
    ``DiplfParams`` can configure a whole comparison table.
    """
    key = ALIASES.get(name.lower(), name.lower())
    try:
        cls = ESTIMATORS[key]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}; expected one of {sorted(ESTIMATORS)}") from None
    est = cls()
    accepted = est.get_params()
    values = {}
    if params is not None:
        values.update({k: v for k, v in vars(params).items() if k in accepted})
    if backend is not None and "backend" in accepted:
        values["backend"] = backend
    if "n_steps" in accepted:
        values["n_steps"] = ruf_steps
    return est.set_params(**values)
