"""Tests for two-parameter sweeps."""

import math

import numpy as np
import pytest
from commodity_nash.errors import ConfigError, ConfigFileError, GridParity
from commodity_nash.reporters.csv_reporter import CsvReporter
from commodity_nash.sweep import Axis, SweepSpec, load_sweep_spec, run_sweep, solve_point
from commodity_nash.types import PointStatus, Quantity, Spacing


def _spec_file(tmp_path, body: str):
    path = tmp_path / "grid.cfg"
    path.write_text(body, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Axes and sweep files
# ---------------------------------------------------------------------------


def test_axis_values():
    """Test linear and log spacing include both bounds."""
    lin = Axis("l_p", 1.0, 3.0, 3).values()
    np.testing.assert_allclose(lin, [1.0, 2.0, 3.0])
    log = Axis("eta_p", 0.001, 0.1, 3, Spacing.LOG).values()
    np.testing.assert_allclose(log, [0.001, 0.01, 0.1], rtol=1e-12)


def test_axis_validation():
    """Test too few points and non-positive log bounds are rejected."""
    with pytest.raises(ConfigError):
        Axis("l_p", 1.0, 3.0, 1)
    with pytest.raises(ConfigError):
        Axis("eta_p", 0.0, 0.1, 3, Spacing.LOG)


def test_points_row_major():
    """Test axis 2 varies fastest."""
    spec = SweepSpec(Axis("eta_p", 1.0, 2.0, 2), Axis("l_p", 3.0, 5.0, 3))
    assert spec.shape == (2, 3)
    assert spec.points() == [
        (1.0, 3.0),
        (1.0, 4.0),
        (1.0, 5.0),
        (2.0, 3.0),
        (2.0, 4.0),
        (2.0, 5.0),
    ]


def test_load_sweep_spec(tmp_path):
    """Test a complete sweep file."""
    path = _spec_file(
        tmp_path,
        "base = params.cfg\n"
        "axis1 = eta_p, 0.001, 0.1, 9, log\n"
        "axis2 = l_p, 0.5, 10, 4\n"
        "fixed.eta_c = 0.01\n"
        "quantities = premium, unit_price\n"
        "output = out/grid.csv\n",
    )
    spec = load_sweep_spec(path)
    assert spec.axis1 == Axis("eta_p", 0.001, 0.1, 9, Spacing.LOG)
    assert spec.axis2.spacing is Spacing.LINEAR
    assert spec.fixed == {"eta_c": 0.01}
    assert spec.quantities == (Quantity.PREMIUM, Quantity.UNIT_PRICE)
    assert spec.output == tmp_path / "out" / "grid.csv"
    assert spec.base == tmp_path / "params.cfg"


def test_spec_defaults(tmp_path):
    """Test quantities and output default sensibly."""
    body = "axis1 = eta_p, 0.01, 0.1, 2\naxis2 = eta_c, 0.01, 0.1, 2\n"
    spec = load_sweep_spec(_spec_file(tmp_path, body))
    assert spec.quantities == tuple(Quantity)
    assert spec.output == tmp_path / "grid.csv"
    assert spec.base is None


@pytest.mark.parametrize(
    "body, needle",
    [
        ("axis1 = eta_p, 0.01, 0.1, 2\n", "missing axis2"),
        ("axis1 = eta_p, 0.01, 0.1\naxis2 = l_p, 1, 2, 2\n", "expected 'name, lo, hi"),
        ("axis1 = wind, 0.01, 0.1, 2\naxis2 = l_p, 1, 2, 2\n", "unknown parameter 'wind'"),
        ("axis1 = lambda, 0.5, 1, 2\naxis2 = l_p, 1, 2, 2\n", "solved for"),
        ("axis1 = eta_p, 0.01, 0.1, 2\naxis2 = eta_p, 1, 2, 2\n", "same parameter"),
        ("axis1 = eta_p, 0.01, 0.1, 2, cubic\naxis2 = l_p, 1, 2, 2\n", "axis1"),
        ("axis1 = eta_p, 0, 0.1, 2, log\naxis2 = l_p, 1, 2, 2\n", "positive bounds"),
        ("axis1 = eta_p, 0.01, 0.1, 2\naxis2 = l_p, 1, 2, 2\nfixed.l_p = 3\n", "also fixed"),
        ("axis1 = eta_p, 0.01, 0.1, 2\naxis2 = l_p, 1, 2, 2\nfixed.F = 3\n", "cannot fix"),
        ("axis1 = eta_p, 0.01, 0.1, 2\naxis2 = l_p, 1, 2, 2\nquantities = vega\n", "vega"),
        ("axis1 = eta_p, 0.01, 0.1, 2\naxis2 = l_p, 1, 2, 2\ncolour = red\n", "unknown key"),
    ],
)
def test_spec_errors(tmp_path, body, needle):
    """Test malformed sweep files are rejected with a reason."""
    with pytest.raises(ConfigFileError, match=needle):
        load_sweep_spec(_spec_file(tmp_path, body))


def test_shipped_specs_parse(preset_dir):
    """Test the bundled sweep files load and point at the base preset."""
    for name in ("premium_high_cost.cfg", "premium_low_cost.cfg", "producer_cost.cfg"):
        spec = load_sweep_spec(preset_dir / name)
        assert spec.base == preset_dir / "base_study.cfg"
        assert spec.shape == (9, 9)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def test_odd_grid_rejected(base_params, fast_settings):
    """Test an odd step count fails the whole sweep up front."""
    spec = SweepSpec(Axis("eta_p", 0.01, 0.02, 2), Axis("eta_c", 0.01, 0.02, 2))
    with pytest.raises(GridParity):
        run_sweep(spec, base_params, fast_settings.with_overrides(n_steps=401))


def test_invalid_point_is_recorded(base_params, fast_settings):
    """Test a parameter violation becomes a status, not an exception."""
    row = solve_point(base_params, {"eta_p": -1.0}, fast_settings, -1.0, 0.01)
    assert row.status is PointStatus.INVALID_PARAMS
    assert not row.ok
    assert "eta_p" in row.message
    assert math.isnan(row.value(Quantity.PREMIUM))


def test_blow_up_point_is_recorded(base_params, fast_settings):
    """Test solver failures are classified."""
    settings = fast_settings.with_overrides(blow_up_threshold=1e-6)
    row = solve_point(base_params, {}, settings, 0.0, 0.0)
    assert row.status is PointStatus.BLOW_UP


@pytest.mark.slow
def test_small_sweep(tmp_path, base_params, fast_settings):
    """Test rows, grids and CSV output of a small sweep with one bad point."""
    spec = SweepSpec(
        Axis("eta_p", -0.01, 0.02, 2),
        Axis("l_p", 2.0, 5.0, 2),
        fixed={"eta_c": 0.01},
        quantities=(Quantity.PREMIUM, Quantity.LAMBDA_STAR),
    )
    result = run_sweep(spec, base_params, fast_settings)
    assert [(r.x1, r.x2) for r in result.rows] == spec.points()
    assert result.summary[PointStatus.INVALID_PARAMS] == 2
    assert result.summary[PointStatus.OK] == 2

    grid = result.grid(Quantity.LAMBDA_STAR)
    assert grid.shape == (2, 2)
    assert np.isnan(grid[0]).all()
    assert (grid[1] > 0).all()

    path = CsvReporter(tmp_path / "sweep.csv", append=False).emit(result.as_rows())
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "eta_p,l_p,premium,lambda_star,status"
    assert lines[1].endswith(",,,invalid_params")
    assert lines[3].endswith(",ok")
    assert len(lines) == 5


@pytest.mark.slow
def test_sweep_workers_match_serial(base_params, fast_settings):
    """Test process-parallel sweeps give the serial answer in the same order."""
    spec = SweepSpec(Axis("eta_p", 0.005, 0.02, 2), Axis("eta_c", 0.005, 0.02, 2))
    serial = run_sweep(spec, base_params, fast_settings)
    parallel = run_sweep(spec, base_params, fast_settings, workers=2)
    assert serial.rows == parallel.rows


@pytest.mark.slow
def test_producer_payoff_flat_in_risk_aversion(base_params, fast_settings):
    """Test J_p at the agreement depends on l_p but not on eta_p, over a 5x5 grid."""
    spec = SweepSpec(
        Axis("eta_p", 0.001, 0.1, 5, Spacing.LOG),
        Axis("l_p", 0.5, 10.0, 5),
        quantities=(Quantity.J_P_STAR_AT_AGREEMENT,),
    )
    result = run_sweep(spec, base_params, fast_settings)
    assert all(row.ok for row in result.rows)
    J = result.grid(Quantity.J_P_STAR_AT_AGREEMENT)
    for column in J.T:
        np.testing.assert_allclose(column, column[0], rtol=1e-8)
    assert not np.isclose(J[0, 0], J[0, 1], rtol=1e-6)


@pytest.mark.slow
def test_premium_antisymmetric_in_risk_aversion(base_params, fast_settings):
    """Test swapping the players' risk aversions flips the premium."""
    spec = SweepSpec(Axis("eta_p", 0.005, 0.02, 2), Axis("eta_c", 0.005, 0.02, 2))
    result = run_sweep(spec, base_params, fast_settings)
    prem = result.grid(Quantity.PREMIUM)
    s0 = base_params.s0
    assert abs(prem[0, 0]) < 1e-4 * s0
    assert abs(prem[1, 1]) < 1e-4 * s0
    assert prem[0, 1] == pytest.approx(-prem[1, 0], abs=1e-5)
    assert np.sign(prem[0, 1]) == -np.sign(prem[1, 0]) == -1
