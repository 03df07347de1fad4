import numpy as np
import pytest

from dampedplf import GaussianState, GridTooSmallError, arctan_model, diplf_update, ggf_update, iplf_update, linear_model, quadratic_model, range_model
from dampedplf.grid import GridSpec, grid_posterior, kld_grid, render_gaussian

from conftest import kalman


def test_density_normalized(range_problem):
    truth = grid_posterior(*range_problem, GridSpec.around(range_problem[0], 6, 200))
    assert np.exp(truth.log_density).sum() * truth.cell_volume == pytest.approx(1.0, abs=1e-9)


def test_affine_posterior_matches_kalman():
    H, c, R = np.array([[1.0, 0.4]]), np.array([0.2]), np.array([[0.5]])
    prior = GaussianState([0.5, -0.5], [[1.0, 0.3], [0.3, 0.8]])
    y = np.array([1.3])
    mean, cov = kalman(prior, H, c, R, y)
    truth = grid_posterior(prior, linear_model(H, c, R), y, GridSpec.around(prior, 8, 600))
    np.testing.assert_allclose(truth.mean(), mean, rtol=1e-4, atol=1e-6)
    np.testing.assert_allclose(truth.cov(), cov, rtol=1e-4, atol=1e-6)


def test_arctan_mode_near_zero_at_two_resolutions(arctan_problem):
    prior = arctan_problem[0]
    for count in (200_000, 400_001):
        truth = grid_posterior(*arctan_problem, GridSpec.around(prior, 8, count))
        assert abs(truth.mode()[0]) < 1e-2


def test_quadratic_damped_estimate_close_to_truth(quadratic_problem):
    truth = grid_posterior(*quadratic_problem)
    damped = diplf_update(*quadratic_problem, "exact").posterior.mean[0]
    assert abs(damped - truth.mean()[0]) < 0.1
    assert abs(damped - truth.mode()[0]) < 0.1
    cycle = iplf_update(*quadratic_problem, "exact").trace.means[-2:, 0]
    for point in cycle:
        assert abs(point - truth.mean()[0]) > 0.45 and abs(point - truth.mode()[0]) > 0.45


def test_grid_too_small(arctan_problem):
    prior, model, y = arctan_problem
    with pytest.raises(GridTooSmallError):
        grid_posterior(prior, model, y, GridSpec([1.0], [4.0], [1000]))


def test_grid_dimension_mismatch(arctan_problem):
    prior, model, y = arctan_problem
    with pytest.raises(ValueError):
        grid_posterior(prior, model, y, GridSpec([0, 0], [1, 1], [5, 5]))


def test_default_grid_sizes():
    assert GridSpec.around(GaussianState([0.0], [[1.0]])).count == (200_000,)
    assert GridSpec.around(GaussianState([0.0, 0.0], np.eye(2))).count == (600, 600)
    spec = GridSpec.around(GaussianState([1.0], [[4.0]]))
    assert spec.lower == (1.0 - 16.0,) and spec.upper == (1.0 + 16.0,)


def test_kld_self_is_zero():
    g = GaussianState([0.3, -0.2], [[1.0, 0.4], [0.4, 2.0]])
    spec = GridSpec.around(g, 8, 400)
    assert abs(kld_grid(render_gaussian(g, spec), g)) <= 1e-6


def test_kld_unit_shift():
    spec = GridSpec.around(GaussianState([0.0], [[1.0]]), 10, 20001)
    assert kld_grid(render_gaussian(GaussianState([0.0], [[1.0]]), spec), GaussianState([1.0], [[1.0]])) == pytest.approx(0.5, abs=1e-4)


def test_kld_arctan_ekf_magnitude(arctan_problem):
    truth = grid_posterior(*arctan_problem)
    value = kld_grid(truth, ggf_update(*arctan_problem, "ekf").posterior)
    assert 4009.10 / 2 <= value <= 4009.10 * 2


def test_kld_nonnegative_on_skewed_truth(arctan_problem):
    truth = grid_posterior(*arctan_problem)
    for mean in (-0.1, 0.0, 0.2):
        assert kld_grid(truth, GaussianState([mean], [[1e-3]])) >= -1e-9


def test_moment_matched_gaussian_minimizes_kld(quadratic_problem):
    truth = grid_posterior(*quadratic_problem, GridSpec.around(quadratic_problem[0], 8, 20001))
    best = truth.moment_matched()
    base = kld_grid(truth, best)
    m, s = best.mean[0], best.cov[0, 0]
    for dm in (-0.3, -0.1, 0.1, 0.3):
        for fs in (0.5, 0.8, 1.25, 2.0):
            assert kld_grid(truth, GaussianState([m + dm], [[s * fs]])) > base


@pytest.mark.parametrize("backend", ["ekf", "ckf", "ukf"])
def test_resolution_stability_1d(arctan_problem, backend):
    prior = arctan_problem[0]
    post = ggf_update(*arctan_problem, backend).posterior
    spec = GridSpec.around(prior, 8, 200_000)
    a = kld_grid(grid_posterior(*arctan_problem, spec), post)
    b = kld_grid(grid_posterior(*arctan_problem, spec.refined(2)), post)
    assert abs(a - b) < 0.05 * a


def test_resolution_stability_2d(range_problem):
    prior = range_problem[0]
    post = ggf_update(*range_problem, "ckf").posterior
    spec = GridSpec.around(prior, 6, 300)
    a = kld_grid(grid_posterior(*range_problem, spec), post)
    b = kld_grid(grid_posterior(*range_problem, spec.refined(2)), post)
    assert abs(a - b) < 0.05 * a
