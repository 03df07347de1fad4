"""Gaussian state container and density utilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, NonRepairableCovarianceError, SingularCovarianceError

LOG_2PI = np.log(2.0 * np.pi)
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)
_SYMMETRY_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Mean and covariance of a multivariate normal density.

    Used for priors, intermediate iterates and posteriors alike. Inputs are
    copied into read-only float arrays; scalars are promoted to 1-vectors and
    1x1 matrices.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        elif cov.ndim == 1 and mean.size == 1 and cov.size == 1:
            cov = cov.reshape(1, 1)
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(
                f"covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
        if np.max(np.abs(cov - cov.T), initial=0.0) > _SYMMETRY_RTOL * scale:
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def std(self) -> np.ndarray:
        """Marginal standard deviations."""
        return np.sqrt(np.diag(self.cov))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}

    def __repr__(self) -> str:
        return f"GaussianState(mean={self.mean.tolist()}, cov={self.cov.tolist()})"


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, raising SingularCovarianceError on failure."""
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"matrix is not positive definite: {exc}") from exc


def ensure_spd(m) -> np.ndarray:
    """Symmetrize `m` and add the smallest diagonal jitter that makes it SPD.

    The jitter is tried from the ladder ``JITTER_LADDER`` scaled by
    ``max(1, max diagonal)``.

    Raises:
        NonRepairableCovarianceError: if even the largest jitter fails.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    sym = 0.5 * (m + m.T)
    if not np.all(np.isfinite(sym)):
        raise NonRepairableCovarianceError("matrix contains non-finite entries")
    scale = max(1.0, float(np.max(np.diag(sym))))
    eye = np.eye(sym.shape[0])
    for jitter in JITTER_LADDER:
        candidate = sym + jitter * scale * eye if jitter else sym
        try:
            np.linalg.cholesky(candidate)
        except np.linalg.LinAlgError:
            continue
        return candidate
    raise NonRepairableCovarianceError(
        f"matrix could not be made positive definite with jitter up to {JITTER_LADDER[-1] * scale:g}"
    )


def log_pdf(x, g: GaussianState) -> float:
    """Log density of `g` evaluated at `x`."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != g.dim:
        raise DimensionError(f"point has length {x.size}, density has dimension {g.dim}")
    chol = cholesky(g.cov)
    z = np.linalg.solve(chol, x - g.mean)
    half_logdet = np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (g.dim * LOG_2PI + z @ z) - half_logdet)


def log_pdf_points(x: np.ndarray, g: GaussianState) -> np.ndarray:
    """Vectorized log density for an ``(N, n)`` array of points."""
    x = np.asarray(x, dtype=float).reshape(-1, g.dim)
    chol = cholesky(g.cov)
    z = np.linalg.solve(chol, (x - g.mean).T)
    half_logdet = np.sum(np.log(np.diag(chol)))
    return -0.5 * (g.dim * LOG_2PI + np.sum(z * z, axis=0)) - half_logdet


def kld_gaussian(p: GaussianState, q: GaussianState) -> float:
    """Closed-form KL(p || q) between two Gaussians."""
    if p.dim != q.dim:
        raise DimensionError(f"dimensions differ: {p.dim} vs {q.dim}")
    chol_q = cholesky(q.cov)
    chol_p = cholesky(p.cov)
    n = p.dim
    a = np.linalg.solve(chol_q, chol_p)
    trace_term = np.sum(a * a)
    z = np.linalg.solve(chol_q, p.mean - q.mean)
    logdet_ratio = 2.0 * (np.sum(np.log(np.diag(chol_q))) - np.sum(np.log(np.diag(chol_p))))
    return float(max(0.5 * (trace_term + z @ z - n + logdet_ratio), 0.0))
