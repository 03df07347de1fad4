import csv
import json

import numpy as np
import pytest

from dampedplf import DiplfParams, GaussianState, quadratic_model, range_model
from dampedplf.experiments import (
    CSV_COLUMNS,
    CountingBackend,
    ExperimentReport,
    run_arctan_experiment,
    run_custom_experiment,
    run_range_experiment,
    sample_trial,
    sweep_params,
    trial_streams,
)
from dampedplf.moments import make_backend

SMALL = {"grid_nodes": 120, "mc_samples": 2000}


@pytest.fixture(scope="module")
def arctan_report():
    return run_arctan_experiment(mc_samples=20_000, grid_nodes=50_000)


@pytest.fixture(scope="module")
def range_report():
    return run_range_experiment(n_trials=3, **SMALL)


def test_arctan_report_has_every_cell(arctan_report):
    table = arctan_report.table()
    assert set(table) == {"mc", "ekf", "ckf", "ukf"}
    assert all(set(row) == {"ggf", "ruf", "iplf", "diplf"} for row in table.values())
    assert arctan_report.metadata["seed"] == 10


def test_arctan_iteration_rows(arctan_report):
    iekf = [arctan_report.value("iekf", "ekf", f"iter_mean_{k}") for k in range(1, 7)]
    np.testing.assert_allclose(iekf, [-7.64, 58.28, -1.77, 2.60, -6.66, 48.47], atol=0.01)


def test_csv_formats(arctan_report, tmp_path):
    paths = arctan_report.write(tmp_path)
    names = {p.name for p in paths}
    assert names == {"arctan.csv", "arctan_table.csv", "arctan_iterations.csv", "arctan.json", "arctan_timing.json"}
    rows = list(csv.reader((tmp_path / "arctan.csv").open()))
    assert tuple(rows[0]) == CSV_COLUMNS
    kld = [r for r in rows[1:] if r[5] == "kld"]
    assert len(kld) == 16
    for r in kld:
        mantissa, exponent = r[6].split("e")
        assert len(mantissa.replace("-", "").replace(".", "")) == 6
    table = list(csv.reader((tmp_path / "arctan_table.csv").open()))
    assert table[0] == ["backend", "ggf", "ruf", "iplf", "diplf"]
    iters = list(csv.reader((tmp_path / "arctan_iterations.csv").open()))
    assert iters[0] == ["filter", "1", "2", "3", "4", "5", "6"]
    assert iters[1][0] == "iplf/mc"
    assert iters[2] == ["iekf/ekf", "-7.64", "58.29", "-1.77", "2.60", "-6.66", "48.47"]


def test_json_has_no_timing(arctan_report, tmp_path):
    arctan_report.to_json(tmp_path / "a.json")
    data = json.loads((tmp_path / "a.json").read_text())
    assert "timing" not in data and data["experiment"] == "arctan"
    assert data["metadata"]["grid"]["count"] == [50_000]


def test_arctan_traces_on_demand(tmp_path):
    report = run_arctan_experiment(backends=["ckf"], algorithms=["diplf"], grid_nodes=50_000, traces=True)
    report.to_json(tmp_path / "t.json", include_traces=True)
    data = json.loads((tmp_path / "t.json").read_text())
    assert "diplf/ckf" in data["traces"]


def test_trial_streams_independent():
    a, b, c = trial_streams(1, 0)
    assert len({a.generate_state(1)[0], b.generate_state(1)[0], c.generate_state(1)[0]}) == 3
    x0, y0, s0 = sample_trial(range_model(), GaussianState([0, 0], np.eye(2)), 1, 0)
    x1, y1, s1 = sample_trial(range_model(), GaussianState([0, 0], np.eye(2)), 1, 0)
    np.testing.assert_array_equal(y0, y1)
    assert s0 == s1
    x2, _, _ = sample_trial(range_model(), GaussianState([0, 0], np.eye(2)), 1, 1)
    assert not np.array_equal(x0, x2)


def test_range_report_shape(range_report):
    assert range_report.metadata["n_trials"] == 3
    kld = [r for r in range_report.rows if r["metric"] == "kld"]
    assert len(kld) == 16 and all(r["n"] == 3 and r["stderr"] > 0 for r in kld)
    assert range_report.within_error_policy()


def test_range_reproducible_and_parallel_invariant(range_report, tmp_path):
    again = run_range_experiment(n_trials=3, jobs=2, **SMALL)
    assert again.to_dict() == range_report.to_dict()
    range_report.to_csv(tmp_path / "a.csv")
    again.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_range_seed_changes_results(range_report):
    other = run_range_experiment(n_trials=3, seed=2, **SMALL)
    assert other.value("ggf", "ckf") != range_report.value("ggf", "ckf")


def test_range_errors_recorded_and_policy(caplog):
    report = run_range_experiment(n_trials=2, backends=["ekf"], algorithms=["ggf"], grid_std=0.5, grid_nodes=50)
    assert len(report.errors) == 2
    assert {e["trial"] for e in report.errors} == {0, 1}
    assert not report.within_error_policy()
    assert report.value("ggf", "ekf", "kld") != report.value("ggf", "ekf", "kld")  # nan


def test_counting_backend():
    be = CountingBackend(make_backend("ckf"))
    ev = be.evaluator(range_model(), np.eye(2))
    ev(np.zeros(2))
    ev(np.ones(2))
    assert be.calls == 2 and be.name == "ckf"


def test_sweep_report():
    report = sweep_params([0.1, 0.5], [0.5, 0.9], n_trials=2, **SMALL)
    kld = [r for r in report.rows if r["metric"] == "kld"]
    assert {(r["tau"], r["beta"]) for r in kld} == {(0.1, 0.5), (0.1, 0.9), (0.5, 0.5), (0.5, 0.9)}
    evals = [r["value"] for r in report.rows if r["metric"] == "moment_evals"]
    assert all(v >= 2 for v in evals)
    assert set(report.timing) == {"0.1,0.5/ckf", "0.1,0.9/ckf", "0.5,0.5/ckf", "0.5,0.9/ckf"}


def test_sweep_default_cell_matches_range_run():
    params = DiplfParams()
    sweep = sweep_params([params.tau], [params.beta], n_trials=3, **SMALL)
    direct = run_range_experiment(n_trials=3, backends=["ckf"], algorithms=["diplf"], **SMALL)
    assert sweep.value("diplf", "ckf", "kld", tau=0.5, beta=0.9) == direct.value("diplf", "ckf", "kld")


def test_custom_experiment():
    report = run_custom_experiment(quadratic_model(), GaussianState([1.0], [[1.0]]), [-4.0], backends=["exact"], algorithms=["ggf", "diplf"], grid_nodes=20001)
    assert report.value("ggf", "exact", "posterior_mean_0") == pytest.approx(-0.2)
    assert report.value("diplf", "exact", "kld") < report.value("ggf", "exact", "kld")


def test_report_value_missing():
    with pytest.raises(KeyError):
        ExperimentReport("x").value("ggf", "ekf")
