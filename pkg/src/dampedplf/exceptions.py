"""Exception hierarchy shared by all modules."""


class FilterError(Exception):
    """Base class for every error raised by this package."""


class SingularCovarianceError(FilterError, ValueError):
    """A covariance that must be positive definite could not be factorized."""


class NonRepairableCovarianceError(SingularCovarianceError):
    """Diagonal jitter failed to make a matrix positive definite."""


class DimensionError(FilterError, ValueError):
    """Array shapes are inconsistent with the model dimensions."""


class SingularGeometryError(FilterError, ValueError):
    """Jacobian undefined, e.g. the state coincides with a beacon."""


class MissingMomentsError(FilterError, ValueError):
    """The exact-moment backend was used with a model lacking the hook."""


class GridTooSmallError(FilterError, ValueError):
    """Posterior mass reaches the boundary of the evaluation grid."""


class ConfigError(FilterError, ValueError):
    """Experiment configuration failed validation."""
