"""Tests for the commodity-nash command line."""

import pytest
import structlog
from commodity_nash import cli
from commodity_nash.cli import EXIT_CONFIG, EXIT_MC, EXIT_SOLVER, app
from commodity_nash.montecarlo import validate as real_validate
from typer.testing import CliRunner

from .conftest import PRESETS

runner = CliRunner()
CONFIG = str(PRESETS / "base_study.cfg")
MC_FLAGS = ["--steps", "200", "--paths", "200", "--mc-steps", "100"]


def test_solve_writes_csv(tmp_path):
    """Test solve prints the equilibrium and writes both CSV files."""
    out = tmp_path / "out"
    args = ["solve", "--config", CONFIG, "--lambda", "1", "--F", "40", "--steps", "200"]
    result = runner.invoke(app, [*args, "-o", str(out)])
    assert result.exit_code == 0, result.output
    assert "equilibrium" in result.output
    header = (out / "equilibrium.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("lambda,F,")
    assert (out / "moments.csv").is_file()


def test_logging_follows_stderr_after_invoke(capsys):
    """Test events logged after a CLI run reach the current stderr."""
    result = runner.invoke(app, ["solve", "--config", CONFIG, "--lambda", "0", "--steps", "200"])
    assert result.exit_code == 0, result.output
    structlog.get_logger().info("after_cli", value=1)
    assert "after_cli" in capsys.readouterr().err


def test_solve_missing_config(tmp_path):
    """Test a missing parameter file exits with the configuration code."""
    result = runner.invoke(app, ["solve", "--config", str(tmp_path / "nope.cfg")])
    assert result.exit_code == EXIT_CONFIG


def test_solve_invalid_override():
    """Test an override breaking an invariant exits with the configuration code."""
    result = runner.invoke(app, ["solve", "--config", CONFIG, "--eta-p", "-1", "--steps", "200"])
    assert result.exit_code == EXIT_CONFIG


def test_solve_odd_grid():
    """Test an odd step count is a solver error."""
    result = runner.invoke(app, ["solve", "--config", CONFIG, "--steps", "201"])
    assert result.exit_code == EXIT_SOLVER


def test_price_bad_bracket():
    """Test a malformed --bracket exits with the configuration code."""
    result = runner.invoke(app, ["price", "--config", CONFIG, "--bracket", "1"])
    assert result.exit_code == EXIT_CONFIG


def test_price_appends_premium_row(tmp_path, monkeypatch):
    """Test price finds the agreement and appends to premium.csv."""
    monkeypatch.setenv("COMMODITY_NASH_SCAN_POINTS", "16")
    out = tmp_path / "out"
    args = ["price", "--config", CONFIG, "--steps", "400", "--eta-p", "0.05", "-o", str(out)]
    for _ in range(2):
        result = runner.invoke(app, args)
        assert result.exit_code == 0, result.output
    lines = (out / "premium.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("eta_p,eta_c,l_p,l_c,lambda_star")
    assert len(lines) == 3


def test_mc_validate_failure_exit_code(monkeypatch):
    """Test a failed Monte Carlo check exits with its own code."""
    monkeypatch.setattr(
        cli, "validate", lambda report, cfg: real_validate(report, cfg, identity_rtol=-1.0)
    )
    result = runner.invoke(app, ["mc-validate", "--config", CONFIG, *MC_FLAGS])
    assert result.exit_code == EXIT_MC


def test_mc_validate_deviation_csv(tmp_path, monkeypatch):
    """Test a passing run writes the term and deviation tables."""
    monkeypatch.setattr(
        cli,
        "validate",
        lambda report, cfg: real_validate(
            report, cfg, payoff_band=1e9, moment_band=1e9, identity_rtol=1.0
        ),
    )
    out = tmp_path / "out"
    result = runner.invoke(
        app,
        [
            "mc-validate",
            "--config",
            CONFIG,
            *MC_FLAGS,
            "--lambda",
            "1",
            "--at-indifference",
            "--deviate",
            "q_mean",
            "--epsilons",
            "0",
            "-o",
            str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    terms = (out / "mc_terms.csv").read_text(encoding="utf-8").splitlines()
    assert terms[0].startswith("player,profit,")
    assert len(terms) == 3
    deviations = (out / "deviations.csv").read_text(encoding="utf-8").splitlines()
    assert deviations[0] == "player,gain,epsilon,delta_J,se"
    assert deviations[1].startswith("producer,q_mean,0,0,")


def test_mc_validate_bad_epsilons():
    """Test non-numeric epsilons exit with the configuration code."""
    result = runner.invoke(app, ["mc-validate", "--config", CONFIG, "--epsilons", "a,b"])
    assert result.exit_code == EXIT_CONFIG


def test_sweep_bad_spec(tmp_path):
    """Test an invalid sweep file exits with the configuration code."""
    spec = tmp_path / "grid.cfg"
    spec.write_text("axis1 = eta_p, 0.01, 0.1, 2\n", encoding="utf-8")
    result = runner.invoke(app, ["sweep", "--spec", str(spec), "--config", CONFIG])
    assert result.exit_code == EXIT_CONFIG


@pytest.mark.slow
def test_sweep_writes_csv(tmp_path, monkeypatch):
    """Test a small sweep writes one CSV row per grid point."""
    monkeypatch.setenv("COMMODITY_NASH_SCAN_POINTS", "16")
    spec = tmp_path / "grid.cfg"
    spec.write_text(
        f"base = {PRESETS / 'base_study.cfg'}\n"
        "axis1 = eta_p, 0.005, 0.02, 2\n"
        "axis2 = eta_c, 0.005, 0.02, 2\n"
        "quantities = premium\n",
        encoding="utf-8",
    )
    result = runner.invoke(app, ["sweep", "--spec", str(spec), "--steps", "400"])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "grid.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "eta_p,eta_c,premium,status"
    assert len(lines) == 5
