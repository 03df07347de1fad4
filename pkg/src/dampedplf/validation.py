"""Input checks shared by the functional and estimator APIs."""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionError
from .gaussian import GaussianState, ensure_spd
from .models import MeasurementModel, Observation, as_observation


def check_gaussian(prior, model: MeasurementModel = None) -> GaussianState:
    """Coerce `prior` to a :class:`GaussianState` and verify it is usable.

    Accepts a GaussianState or a ``(mean, cov)`` pair. The covariance must be
    SPD (up to the jitter :func:`ensure_spd` tolerates).
    """
    if not isinstance(prior, GaussianState):
        mean, cov = prior
        prior = GaussianState(mean, cov)
    if not (np.all(np.isfinite(prior.mean)) and np.all(np.isfinite(prior.cov))):
        raise ValueError("prior contains non-finite values")
    if model is not None and prior.dim != model.state_dim:
        raise DimensionError(f"prior has dimension {prior.dim}, model expects {model.state_dim}")
    ensure_spd(prior.cov)
    return prior


def check_observation(y, model: MeasurementModel) -> np.ndarray:
    """Measurement vector as a float array of the model's length."""
    obs = as_observation(y, model)
    if not np.all(np.isfinite(obs.y)):
        raise ValueError("observation contains non-finite values")
    return obs.y


def check_positive_int(value, name: str) -> int:
    if int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


__all__ = ["check_gaussian", "check_observation", "check_positive_int", "Observation"]
