import textwrap

import pytest

from dampedplf import ConfigError
from dampedplf.config import OUTPUT_DIR_ENV, bundled_config, bundled_config_names, load_config, parse_config


def parse(text):
    return parse_config(textwrap.dedent(text), "cfg.yaml")


@pytest.mark.parametrize("name", ["arctan", "range", "sweep", "quadratic"])
def test_bundled_configs_validate(name):
    cfg = load_config(bundled_config(name))
    assert cfg.experiment in ("arctan", "range", "sweep", "custom")


def test_bundled_names():
    assert {"arctan", "range", "sweep"} <= set(bundled_config_names())


def test_defaults():
    cfg = parse("experiment: range\n")
    assert (cfg.seed, cfg.n_trials, cfg.backends, cfg.algorithms) == (1, 1000, ["mc", "ekf", "ckf", "ukf"], ["ggf", "ruf", "iplf", "diplf"])
    assert cfg.params.tau == 0.5 and cfg.params.beta == 0.9


def test_tau_out_of_range_names_field_and_line():
    with pytest.raises(ConfigError) as err:
        parse(
            """\
            experiment: range
            params:
              beta: 0.9
              tau: 1.5
            """
        )
    assert "cfg.yaml:4" in str(err.value) and "params.tau" in str(err.value)


def test_unknown_key_rejected_with_line():
    with pytest.raises(ConfigError) as err:
        parse("experiment: arctan\nseed: 3\nbogus: 1\n")
    assert "cfg.yaml:3" in str(err.value) and "bogus" in str(err.value)


def test_nested_unknown_key():
    with pytest.raises(ConfigError, match="cfg.yaml:3.*gamma"):
        parse("experiment: arctan\nparams:\n  gamma: 2\n")


def test_invalid_enum():
    with pytest.raises(ConfigError, match="backends"):
        parse("experiment: arctan\nbackends: [ekf, foo]\n")


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError, match=r"cfg.yaml:\d+: invalid YAML"):
        parse("experiment: range\nseed: [1\n")


def test_custom_requires_problem():
    with pytest.raises(ConfigError, match="required"):
        parse("experiment: custom\nmodel: {name: arctan}\n")


def test_custom_dimension_mismatch():
    with pytest.raises(ConfigError, match="cfg.yaml:3.*state dimension"):
        parse("experiment: custom\nmodel: {name: arctan}\nprior: {mean: [1, 2], cov: [[1, 0], [0, 1]]}\ny: [0]\n")


def test_model_only_for_custom():
    with pytest.raises(ConfigError, match="only allowed for custom"):
        parse("experiment: arctan\nmodel: {name: arctan}\n")


def test_exact_needs_closed_form():
    with pytest.raises(ConfigError, match="exact"):
        parse("experiment: custom\nmodel: {name: arctan}\nprior: {mean: [1], cov: [[1]]}\ny: [0]\nbackends: [exact]\n")


def test_sweep_requires_grid():
    with pytest.raises(ConfigError, match="sweep"):
        parse("experiment: sweep\n")


def test_output_dir_env_override(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    assert parse("experiment: arctan\noutput: {dir: elsewhere}\n").output_dir == tmp_path


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/x.yaml")


def test_top_level_must_be_mapping():
    with pytest.raises(ConfigError, match="mapping"):
        parse("- 1\n- 2\n")
