"""Statistical linear regression of a measurement function.

Given moments of ``h(x)`` under ``N(mean, cov)``, the affine model
``h(x) ~ J x + b + e_omega`` with ``e_omega ~ N(0, omega)`` reproduces those
moments exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .gaussian import GaussianState
from .exceptions import SingularCovarianceError
from .moments import Moments

logger = logging.getLogger(__name__)

OMEGA_CLIP_WARN = 1e-9


@dataclass(frozen=True, eq=False)
class LinearizedModel:
    """Affine surrogate ``(J, b, omega)`` of a measurement function."""

    J: np.ndarray
    b: np.ndarray
    omega: np.ndarray


def _cho(m: np.ndarray):
    try:
        return cho_factor(m, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularCovarianceError(f"matrix is not positive definite: {exc}") from exc


def clip_psd(m: np.ndarray) -> np.ndarray:
    """Symmetrize and set negative eigenvalues to zero."""
    m = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(m)
    if np.all(vals >= 0.0):
        return m
    clipped = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return 0.5 * (clipped + clipped.T)


def slr_from_moments(m: Moments, g: GaussianState) -> LinearizedModel:
    """Linearize with respect to ``g`` using precomputed moments."""
    factor = _cho(g.cov)
    J = cho_solve(factor, m.cross_cov).T
    b = m.yhat - J @ g.mean
    raw = m.meas_cov - J @ g.cov @ J.T
    omega = clip_psd(raw)
    removed = np.trace(omega) - np.trace(0.5 * (raw + raw.T))
    if removed > OMEGA_CLIP_WARN * max(np.trace(m.meas_cov), np.finfo(float).tiny):
        logger.debug("clipping removed %.3g of linearization-error variance", removed)
    return LinearizedModel(J=J, b=b, omega=omega)


def information_matrix(J: np.ndarray, noise: np.ndarray, prior_precision: np.ndarray) -> np.ndarray:
    """``J^T noise^{-1} J + prior_precision``."""
    factor = _cho(noise)
    return J.T @ cho_solve(factor, J) + prior_precision


def info_form_jacobian(m: Moments, J_prev, omega, model, prior: GaussianState, prior_precision=None) -> np.ndarray:
    """SLR Jacobian without inverting the n x n state covariance.

    `m` must be the moments with respect to the covariance implied by
    ``(J_prev, omega)``, i.e. ``(J_prev^T (R + omega)^{-1} J_prev + P0^{-1})^{-1}``.
    Only the ``d x d`` matrix ``R + omega`` is factorized; pass
    ``prior_precision`` to avoid recomputing ``P0^{-1}``.
    """
    if prior_precision is None:
        prior_precision = cho_solve(_cho(prior.cov), np.eye(prior.dim))
    J_prev = np.atleast_2d(np.asarray(J_prev, dtype=float))
    info = information_matrix(J_prev, model.noise_cov + np.asarray(omega, dtype=float), prior_precision)
    return m.cross_cov.T @ info


def precision(cov: np.ndarray) -> np.ndarray:
    """Inverse of an SPD matrix via its Cholesky factor."""
    return cho_solve(_cho(cov), np.eye(cov.shape[0]))
