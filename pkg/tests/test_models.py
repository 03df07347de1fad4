import math

import numpy as np
import pytest

from dampedplf import DimensionError, SingularGeometryError, arctan_model, evaluate, jacobian, linear_model, make_model, quadratic_model, range_model
from dampedplf.models import MeasurementModel, Observation, numerical_jacobian


def test_arctan_evaluate():
    assert evaluate(arctan_model(), [0.0])[0] == 0.0
    assert evaluate(arctan_model(), [2.75])[0] == pytest.approx(1.2220, abs=1e-4)


def test_range_evaluate_at_origin():
    np.testing.assert_allclose(evaluate(range_model(), [0.0, 0.0]), [1.0, 1.0, math.sqrt(5.0)], rtol=1e-15)


def test_range_vectorized_matches_pointwise():
    m = range_model()
    pts = np.random.default_rng(0).standard_normal((50, 2))
    np.testing.assert_allclose(m.h(pts), np.array([evaluate(m, p) for p in pts]), rtol=1e-14)


def test_evaluate_dimension_mismatch():
    with pytest.raises(DimensionError):
        evaluate(range_model(), [0.0])


def test_jacobian_examples():
    assert jacobian(arctan_model(), [0.0])[0, 0] == pytest.approx(1.0)
    assert jacobian(arctan_model(), [2.75])[0, 0] == pytest.approx(0.11679, abs=1e-5)
    assert jacobian(quadratic_model(), [1.0])[0, 0] == pytest.approx(2.0)


def test_range_jacobian_at_beacon():
    with pytest.raises(SingularGeometryError):
        jacobian(range_model(), [0.0, 1.0])


def test_default_noise_levels():
    assert arctan_model().R[0, 0] == 1e-4
    assert quadratic_model().R[0, 0] == 4.0
    m = range_model()
    np.testing.assert_array_equal(m.R, np.eye(3))
    assert (m.state_dim, m.meas_dim) == (2, 3)


@pytest.mark.parametrize("model", [arctan_model(), quadratic_model(), range_model(), linear_model([[1.0, 2.0], [0.5, -1.0]], [0.1, 0.2])])
def test_analytic_jacobian_matches_finite_differences(model):
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = 3.0 * rng.standard_normal(model.state_dim)
        analytic = jacobian(model, x)
        numeric = numerical_jacobian(model, x)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_numerical_fallback_used_without_analytic():
    m = MeasurementModel(h=lambda x: np.sin(np.asarray(x)), noise_cov=[[1.0]], state_dim=1, meas_dim=1)
    assert jacobian(m, [0.3])[0, 0] == pytest.approx(math.cos(0.3), rel=1e-8)


def test_noise_must_be_spd():
    with pytest.raises(ValueError):
        MeasurementModel(h=np.sin, noise_cov=[[-1.0]], state_dim=1, meas_dim=1)
    with pytest.raises(DimensionError):
        MeasurementModel(h=np.sin, noise_cov=np.eye(2), state_dim=1, meas_dim=1)


def test_observation_dimension():
    with pytest.raises(DimensionError):
        Observation([1.0, 2.0]).check(arctan_model())


def test_make_model():
    assert make_model("range").meas_dim == 3
    with pytest.raises(ValueError):
        make_model("nope")
