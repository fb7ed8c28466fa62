"""Tests for settings and parameter-file loading."""

from pathlib import Path

import pytest
from commodity_nash.config import (
    SolverSettings,
    find_config_file,
    get_settings,
    load_params_file,
    load_run_config,
    param_name,
    parse_kv_file,
)
from commodity_nash.errors import ConfigError, ConfigFileError, ConstraintViolation

from .conftest import BASE


def _write(path: Path, values: dict, extra: str = "") -> Path:
    lines = [f"{'lambda' if k == 'lam' else k} = {v!r}" for k, v in values.items()]
    path.write_text("\n".join(lines) + "\n" + extra, encoding="utf-8")
    return path


def test_default_settings():
    """Test built-in solver defaults."""
    s = SolverSettings()
    assert s.n_steps == 2000
    assert s.mc_paths == 100_000
    assert s.mc_seed == 42
    assert s.bracket_lo < s.bracket_hi


def test_settings_from_env(monkeypatch):
    """Test COMMODITY_NASH_* variables feed the cached settings."""
    monkeypatch.setenv("COMMODITY_NASH_N_STEPS", "800")
    get_settings.cache_clear()
    assert get_settings().n_steps == 800
    assert get_settings() is get_settings()


def test_with_overrides_skips_none():
    """Test None overrides leave settings untouched."""
    s = SolverSettings().with_overrides(n_steps=None, workers=4)
    assert s.n_steps == 2000
    assert s.workers == 4


def test_parse_kv_file_comments_and_blank_lines(tmp_path):
    """Test comments, blank lines and surrounding spaces are ignored."""
    path = tmp_path / "a.cfg"
    path.write_text("# header\n\n  T = 1   # horizon\nk_p=5\n", encoding="utf-8")
    entries = parse_kv_file(path)
    assert {k: e.value for k, e in entries.items()} == {"T": "1", "k_p": "5"}
    assert entries["k_p"].line == 4


@pytest.mark.parametrize(
    "text, needle",
    [
        ("T 1\n", "expected 'name = value'"),
        ("T =\n", "expected 'name = value'"),
        ("T = 1\nT = 2\n", "duplicate key 'T'"),
    ],
)
def test_parse_kv_file_errors(tmp_path, text, needle):
    """Test malformed lines report the file and line."""
    path = tmp_path / "bad.cfg"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigFileError, match=needle) as info:
        parse_kv_file(path)
    assert info.value.path == path
    assert info.value.line >= 1


def test_missing_file(tmp_path):
    """Test an unreadable file is a ConfigFileError."""
    with pytest.raises(ConfigFileError, match="cannot read file"):
        parse_kv_file(tmp_path / "nope.cfg")


def test_param_name_alias():
    """Test 'lambda' maps to the lam field and unknown keys to None."""
    assert param_name("lambda") == "lam"
    assert param_name("eta_p") == "eta_p"
    assert param_name("n_steps") is None
    assert param_name("volatility") is None


def test_load_params_file_splits_settings(tmp_path):
    """Test parameters and solver settings are separated."""
    path = _write(tmp_path / "run.cfg", {**BASE, "lam": 2.0}, "n_steps = 600\n")
    params, settings = load_params_file(path)
    assert params["lam"] == 2.0
    assert params["rho_c"] == BASE["rho_c"]
    assert settings == {"n_steps": "600"}


def test_unknown_key_rejected(tmp_path):
    """Test unknown keys are reported with their line."""
    path = _write(tmp_path / "run.cfg", BASE, "volatility = 3\n")
    with pytest.raises(ConfigFileError, match="unknown key 'volatility'"):
        load_params_file(path)


def test_non_numeric_value(tmp_path):
    """Test non-numeric parameter values are rejected."""
    path = _write(tmp_path / "run.cfg", {**BASE, "T": "one"})
    with pytest.raises(ConfigFileError, match="not a number"):
        load_params_file(path)


def test_missing_parameters(tmp_path):
    """Test a file missing required parameters names them."""
    values = {k: v for k, v in BASE.items() if k not in ("k_p", "s0")}
    path = _write(tmp_path / "run.cfg", values)
    with pytest.raises(ConfigFileError, match="missing parameters: k_p, s0"):
        load_run_config(path)


def test_contract_defaults_to_zero(tmp_path):
    """Test lambda and F default to no contract."""
    run = load_run_config(_write(tmp_path / "run.cfg", BASE))
    assert run.params.lam == 0.0
    assert run.params.F == 0.0
    assert run.source == tmp_path / "run.cfg"


def test_priority_cli_over_file_over_env(tmp_path, monkeypatch):
    """Test CLI flags beat the file, which beats the environment."""
    monkeypatch.setenv("COMMODITY_NASH_N_STEPS", "800")
    monkeypatch.setenv("COMMODITY_NASH_WORKERS", "3")
    get_settings.cache_clear()
    path = _write(tmp_path / "run.cfg", {**BASE, "eta_p": 0.02}, "n_steps = 600\n")

    run = load_run_config(path)
    assert run.settings.n_steps == 600
    assert run.settings.workers == 3

    run = load_run_config(
        path,
        param_overrides={"eta_p": 0.05, "eta_c": None},
        setting_overrides={"n_steps": 1000},
    )
    assert run.settings.n_steps == 1000
    assert run.params.eta_p == 0.05
    assert run.params.eta_c == BASE["eta_c"]


def test_base_settings_replace_env(tmp_path):
    """Test explicit base settings stand in for the environment layer."""
    path = _write(tmp_path / "run.cfg", BASE)
    run = load_run_config(path, base_settings=SolverSettings(n_steps=400, scan_points=16))
    assert run.settings.n_steps == 400
    assert run.settings.scan_points == 16


def test_invalid_setting_value(tmp_path):
    """Test invalid solver settings surface as ConfigError."""
    path = _write(tmp_path / "run.cfg", BASE, "n_steps = 1\n")
    with pytest.raises(ConfigError, match="invalid solver settings"):
        load_run_config(path)


def test_constraint_violation_from_file(tmp_path):
    """Test parameter invariants are enforced on load."""
    path = _write(tmp_path / "run.cfg", {**BASE, "k_p": -1.0})
    with pytest.raises(ConstraintViolation) as info:
        load_run_config(path)
    assert info.value.field == "k_p"


def test_config_discovery(tmp_path):
    """Test the config file is found in the working directory or above."""
    _write(tmp_path / "commodity-nash.cfg", BASE)
    nested = tmp_path / "a" / "b"
    nested.mkdir(parents=True)
    assert find_config_file(nested) == (tmp_path / "commodity-nash.cfg").resolve()
    run = load_run_config()
    assert run.source == (tmp_path / "commodity-nash.cfg").resolve()


def test_no_config_found(tmp_path, monkeypatch):
    """Test a missing config file is a ConfigError."""
    empty = tmp_path / "empty"
    empty.mkdir()
    monkeypatch.chdir(empty)
    with pytest.raises(ConfigError, match="no config file"):
        load_run_config()


def test_preset_loads(preset_dir):
    """Test the shipped base parameter set validates."""
    run = load_run_config(preset_dir / "base_study.cfg")
    assert run.params.gamma * run.params.rho_c == pytest.approx(0.5, rel=1e-12)
    assert run.params.p0 == 2 * run.params.s0 + run.params.gamma * run.params.delta
