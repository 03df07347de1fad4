import numpy as np
import pytest
from sklearn.base import clone

from dampedplf import DIPLF, GGF, IEKF, IPLF, RUF, DampedIEKF, DiplfParams, GaussianState, diplf_update, make_filter
from dampedplf.estimators import ESTIMATORS


def test_get_set_params_roundtrip():
    est = DIPLF(backend="ukf", tau=0.3)
    params = est.get_params()
    assert params["tau"] == 0.3 and params["backend"] == "ukf"
    est.set_params(beta=0.8)
    assert est.beta == 0.8
    twin = clone(est)
    assert twin.get_params() == est.get_params()


@pytest.mark.parametrize("name", sorted(ESTIMATORS))
def test_every_estimator_fits(name, arctan_problem):
    est = ESTIMATORS[name]()
    assert est.fit(*arctan_problem) is est
    assert est.posterior_.dim == 1 and est.n_iter_ >= 1
    assert isinstance(est.diverged_, bool)


def test_estimator_matches_function(range_problem):
    est = DIPLF(backend="ckf", tau=0.4, beta=0.8).fit(*range_problem)
    ref = diplf_update(*range_problem, "ckf", DiplfParams(tau=0.4, beta=0.8)).posterior
    np.testing.assert_array_equal(est.posterior_.mean, ref.mean)


def test_make_filter_shares_params():
    params = DiplfParams(tau=0.25, iplf_max_iter=7)
    assert make_filter("diplf", "mc", params).tau == 0.25
    assert make_filter("iplf", "ekf", params).iplf_max_iter == 7
    assert make_filter("ruf", "ckf", params, ruf_steps=4).n_steps == 4
    assert make_filter("dplf").__class__ is DIPLF
    assert isinstance(make_filter("iekf", "ckf"), IEKF)
    with pytest.raises(ValueError):
        make_filter("kalman")


def test_backend_params_forwarded(arctan_problem):
    est = GGF(backend="mc", backend_params={"sample_count": 500, "seed": 3}).fit(*arctan_problem)
    again = GGF(backend="mc", backend_params={"sample_count": 500, "seed": 3}).fit(*arctan_problem)
    assert est.posterior_.mean[0] == again.posterior_.mean[0]


def test_input_validation(arctan_problem):
    prior, model, _ = arctan_problem
    with pytest.raises(ValueError):
        RUF().fit(prior, model, [0.0, 1.0])
    with pytest.raises(ValueError):
        IPLF().fit(GaussianState([0.0, 0.0], np.eye(2)), model, [0.0])
    with pytest.raises(ValueError):
        RUF(n_steps=0).fit(*arctan_problem)


def test_invalid_hyperparameter_raises_on_fit(arctan_problem):
    with pytest.raises(ValueError):
        DampedIEKF(tau=2.0).fit(*arctan_problem)
