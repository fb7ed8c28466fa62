"""Pytest configuration and shared parameter sets."""

from __future__ import annotations

from pathlib import Path

import pytest
import structlog
from commodity_nash.config import SolverSettings, get_settings
from commodity_nash.grid import TimeGrid
from commodity_nash.model import ValidatedParams, validate_params

PRESETS = Path(__file__).resolve().parents[2] / "config"

# symmetric players: rho_p = gamma rho_c, p0 = 2 s0 + gamma delta, p1 = gamma - 1
BASE = {
    "T": 1.0,
    "k_p": 5.0,
    "k_c": 5.0,
    "l_p": 5.0,
    "l_c": 5.0,
    "sigma_p": 10.0,
    "sigma_c": 10.0,
    "eta_p": 0.01,
    "eta_c": 0.01,
    "rho_p": 0.5,
    "rho_c": 0.5 / 1.2,
    "gamma": 1.2,
    "delta": 5.0,
    "p0": 106.0,
    "p1": 0.2,
    "s0": 50.0,
    "q0": 100.0,
    "c0": 100.0,
}


@pytest.fixture(autouse=True)
def _isolated_settings(monkeypatch: pytest.MonkeyPatch, tmp_path: Path):
    """Keep stray COMMODITY_NASH_* variables, .env files and logging setup out of the tests."""
    import os

    for key in list(os.environ):
        if key.startswith("COMMODITY_NASH_"):
            monkeypatch.delenv(key)
    monkeypatch.chdir(tmp_path)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()
    structlog.reset_defaults()


@pytest.fixture
def base_params() -> ValidatedParams:
    return validate_params(BASE)


@pytest.fixture
def grid() -> TimeGrid:
    return TimeGrid(1.0, 2000)


@pytest.fixture
def coarse_grid() -> TimeGrid:
    return TimeGrid(1.0, 400)


@pytest.fixture
def fast_settings() -> SolverSettings:
    """Coarse grid and short scan, enough for signs and identities."""
    return SolverSettings(n_steps=400, scan_points=16)


@pytest.fixture
def preset_dir() -> Path:
    return PRESETS
