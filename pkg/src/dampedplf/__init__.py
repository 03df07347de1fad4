"""Damped iterated posterior linearization filtering and its comparison family."""

__version__ = "0.1.0"

from .exceptions import (
    ConfigError,
    DimensionError,
    FilterError,
    GridTooSmallError,
    MissingMomentsError,
    NonRepairableCovarianceError,
    SingularCovarianceError,
    SingularGeometryError,
)
from .gaussian import GaussianState, ensure_spd, kld_gaussian, log_pdf
from .moments import (
    CubatureBackend,
    ExactBackend,
    MomentBackend,
    Moments,
    MonteCarloBackend,
    SigmaPointSet,
    TaylorBackend,
    UnscentedBackend,
    compute_moments,
    make_backend,
    sigma_points,
)
from .models import (
    MeasurementModel,
    Observation,
    arctan_model,
    evaluate,
    jacobian,
    linear_model,
    make_model,
    quadratic_model,
    range_model,
)
from .slr import LinearizedModel, info_form_jacobian, slr_from_moments
from .filters import (
    DiplfParams,
    UpdateResult,
    UpdateTrace,
    cost_q,
    damped_iekf_update,
    diplf_update,
    ggf_update,
    iekf_update,
    iplf_update,
    line_search,
    ruf_update,
)
from .grid import GridDensity, GridSpec, grid_posterior, kld_grid
from .estimators import DIPLF, GGF, IEKF, IPLF, RUF, DampedIEKF, make_filter
from .experiments import ExperimentReport, run_arctan_experiment, run_range_experiment, sweep_params

__all__ = [name for name in dir() if not name.startswith("_")]
