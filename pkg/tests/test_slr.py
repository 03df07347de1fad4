import logging

import numpy as np
import pytest

from dampedplf import GaussianState, Moments, compute_moments, info_form_jacobian, linear_model, quadratic_model, range_model, slr_from_moments
from dampedplf.slr import clip_psd


def test_affine_omega_zero():
    model = linear_model([[1.0, 2.0]], [0.3])
    g = GaussianState([0.5, -1.0], [[2.0, 0.3], [0.3, 1.0]])
    lin = slr_from_moments(compute_moments("exact", model, g), g)
    np.testing.assert_allclose(lin.J, [[1.0, 2.0]], atol=1e-14)
    np.testing.assert_allclose(lin.b, [0.3], atol=1e-14)
    np.testing.assert_array_equal(lin.omega, 0.0)


def test_quadratic_exact_example():
    g = GaussianState([1.0], [[1.0]])
    lin = slr_from_moments(compute_moments("exact", quadratic_model(), g), g)
    assert lin.J[0, 0] == pytest.approx(2.0)
    assert lin.b[0] == pytest.approx(0.0, abs=1e-15)
    assert lin.omega[0, 0] == pytest.approx(2.0)


def test_taylor_moments_give_zero_omega():
    g = GaussianState([0.3, 0.4], [[1.0, 0.2], [0.2, 0.7]])
    lin = slr_from_moments(compute_moments("ekf", range_model(), g), g)
    np.testing.assert_allclose(lin.omega, 0.0, atol=1e-15)


def test_reconstruction_identity():
    g = GaussianState([0.3, 0.4], [[1.0, 0.2], [0.2, 0.7]])
    m = compute_moments("ckf", range_model(), g)
    lin = slr_from_moments(m, g)
    np.testing.assert_allclose(lin.J @ g.cov @ lin.J.T + lin.omega, m.meas_cov, rtol=1e-8)
    np.testing.assert_allclose(lin.J @ g.mean + lin.b, m.yhat, rtol=1e-12)
    np.testing.assert_allclose(g.cov @ lin.J.T, m.cross_cov, rtol=1e-10)


def test_clip_psd_removes_negative_eigenvalues():
    out = clip_psd(np.array([[1.0, 0.0], [0.0, -1e-3]]))
    assert np.linalg.eigvalsh(out).min() >= 0.0


def test_large_clip_is_logged(caplog):
    g = GaussianState([0.0], [[1.0]])
    m = Moments(yhat=np.array([0.0]), cross_cov=np.array([[1.0]]), meas_cov=np.array([[0.5]]))
    with caplog.at_level(logging.DEBUG, logger="dampedplf.slr"):
        lin = slr_from_moments(m, g)
    assert lin.omega[0, 0] == 0.0
    assert any("clipping" in r.message for r in caplog.records)


def test_singular_covariance():
    from dampedplf import SingularCovarianceError

    g = GaussianState.__new__(GaussianState)
    object.__setattr__(g, "mean", np.zeros(2))
    object.__setattr__(g, "cov", np.zeros((2, 2)))
    m = Moments(yhat=np.zeros(1), cross_cov=np.zeros((2, 1)), meas_cov=np.zeros((1, 1)))
    with pytest.raises(SingularCovarianceError):
        slr_from_moments(m, g)


def _posterior_cov(prior, J, noise):
    S = J @ prior.cov @ J.T + noise
    K = np.linalg.solve(S, J @ prior.cov).T
    return prior.cov - K @ S @ K.T


def test_info_form_affine_equals_H():
    H = np.array([[1.0, -0.5]])
    model = linear_model(H, [0.0], [[0.3]])
    prior = GaussianState([0.0, 0.0], np.eye(2))
    cov = _posterior_cov(prior, H, model.R)
    m = compute_moments("exact", model, GaussianState([0.4, 0.1], cov))
    np.testing.assert_allclose(info_form_jacobian(m, H, np.zeros((1, 1)), model, prior), H, atol=1e-12)


def test_info_form_quadratic_outer_step():
    model = quadratic_model()
    prior = GaussianState([1.0], [[1.0]])
    lin = slr_from_moments(compute_moments("exact", model, prior), prior)
    cov = _posterior_cov(prior, lin.J, model.R + lin.omega)
    g = GaussianState([-0.2], cov)
    m = compute_moments("exact", model, g)
    direct = slr_from_moments(m, g).J
    np.testing.assert_allclose(info_form_jacobian(m, lin.J, lin.omega, model, prior), direct, rtol=1e-8)


def test_info_form_range_pair():
    rng = np.random.default_rng(5)
    model = range_model(beacons=[(2.0, 1.0)], noise_cov=[[0.5]])
    for _ in range(20):
        a = rng.standard_normal((2, 2))
        prior = GaussianState(rng.standard_normal(2), a @ a.T + 0.5 * np.eye(2))
        J_prev = rng.standard_normal((1, 2))
        omega = np.array([[rng.uniform(0, 1)]])
        cov = _posterior_cov(prior, J_prev, model.R + omega)
        g = GaussianState(rng.standard_normal(2), cov)
        m = compute_moments("ckf", model, g)
        np.testing.assert_allclose(info_form_jacobian(m, J_prev, omega, model, prior), slr_from_moments(m, g).J, rtol=1e-8, atol=1e-12)
