"""Configuration loading for commodity-nash.

Priority (highest → lowest):
  1. CLI flags
  2. commodity-nash.cfg file (flat ``name = value`` lines)
  3. COMMODITY_NASH_* environment variables
  4. Built-in defaults

Model parameters only come from the file and the CLI; solver settings may
come from all four layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any

import structlog
from dotenv import find_dotenv, load_dotenv
from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from commodity_nash.errors import ConfigError, ConfigFileError
from commodity_nash.model import ModelParams, ValidatedParams, validate_params

# Load .env, walking up from cwd (override=False keeps existing shell env vars intact)
load_dotenv(find_dotenv(usecwd=True), override=False)

logger = structlog.get_logger()

CONFIG_FILENAMES = ["commodity-nash.cfg", ".commodity-nash.cfg"]


class SolverSettings(BaseSettings):
    """Numerical settings shared by every subcommand."""

    n_steps: int = Field(2000, ge=2, description="Riccati / moment grid steps")
    blow_up_threshold: float = Field(1e8, gt=0)
    bracket_lo: float = Field(1e-3, gt=0)
    bracket_hi: float = Field(50.0, gt=0)
    scan_points: int = Field(64, ge=2)
    bisection_rel_width: float = Field(1e-10, gt=0)
    price_rel_tol: float = Field(1e-8, gt=0)
    mc_paths: int = Field(100_000, ge=2)
    mc_time_steps: int = Field(1000, ge=1)
    mc_seed: int = Field(42, ge=0, lt=2**64)
    mc_chunk_size: int = Field(10_000, ge=2)
    workers: int = Field(1, ge=1)
    output_dir: Path = Path("outputs")
    log_level: str = "INFO"

    model_config = SettingsConfigDict(
        env_prefix="COMMODITY_NASH_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    def with_overrides(self, **changes: Any) -> SolverSettings:
        """Copy with the non-``None`` *changes* applied and validated."""
        data = self.model_dump()
        data.update({k: v for k, v in changes.items() if v is not None})
        return type(self).model_validate(data)


@lru_cache
def get_settings() -> SolverSettings:
    """Get cached settings instance."""
    return SolverSettings()


# ---------------------------------------------------------------------------
# Flat key-value files
# ---------------------------------------------------------------------------


def find_config_file(start: Path | None = None) -> Path | None:
    """Walk up from *start* (default cwd) looking for a config file."""
    directory = (start or Path.cwd()).resolve()
    for _ in range(20):
        for name in CONFIG_FILENAMES:
            candidate = directory / name
            if candidate.is_file():
                return candidate
        parent = directory.parent
        if parent == directory:
            break
        directory = parent
    return None


@dataclass(frozen=True, slots=True)
class Entry:
    key: str
    value: str
    line: int


def parse_kv_file(path: Path | str) -> dict[str, Entry]:
    """Read ``name = value`` lines; ``#`` starts a comment.

    Raises:
        ConfigFileError: unreadable file, malformed line or duplicate key.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigFileError(path, 0, f"cannot read file: {exc.strerror or exc}") from exc

    entries: dict[str, Entry] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigFileError(path, lineno, f"expected 'name = value', got {raw.strip()!r}")
        if key in entries:
            raise ConfigFileError(
                path, lineno, f"duplicate key {key!r} (first set on line {entries[key].line})"
            )
        entries[key] = Entry(key, value, lineno)
    return entries


def param_name(key: str) -> str | None:
    if key == "lambda":
        return "lam"
    return key if key in ModelParams.model_fields else None


def parse_float(entry: Entry, path: Path) -> float:
    try:
        return float(entry.value)
    except ValueError:
        raise ConfigFileError(
            path, entry.line, f"{entry.key}: {entry.value!r} is not a number"
        ) from None


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class RunConfig:
    """Validated model parameters plus the solver settings to use with them."""

    params: ValidatedParams
    settings: SolverSettings
    source: Path | None = None


def load_params_file(path: Path | str) -> tuple[dict[str, float], dict[str, str]]:
    """Split a config file into model parameters and solver-setting overrides.

    Raises:
        ConfigFileError: unknown key or non-numeric parameter value.
    """
    path = Path(path)
    params: dict[str, float] = {}
    settings: dict[str, str] = {}
    for entry in parse_kv_file(path).values():
        if (name := param_name(entry.key)) is not None:
            params[name] = parse_float(entry, path)
        elif entry.key in SolverSettings.model_fields:
            settings[entry.key] = entry.value
        else:
            raise ConfigFileError(path, entry.line, f"unknown key {entry.key!r}")
    return params, settings


def load_run_config(
    path: Path | None = None,
    *,
    param_overrides: dict[str, float | None] | None = None,
    setting_overrides: dict[str, Any] | None = None,
    base_settings: SolverSettings | None = None,
) -> RunConfig:
    """Load params and settings, merging env → file → CLI flags (lowest → highest).

    Raises:
        ConfigError: no config file, missing parameters or invalid settings.
        ConstraintViolation: a parameter breaks an invariant.
    """
    config_path = path or find_config_file()
    if config_path is None:
        raise ConfigError(f"no config file given and none of {CONFIG_FILENAMES} found")

    logger.info("loading_config", path=str(config_path))
    params, file_settings = load_params_file(config_path)
    params.update({k: v for k, v in (param_overrides or {}).items() if v is not None})

    missing = [
        name
        for name, info in ModelParams.model_fields.items()
        if info.is_required() and name not in params
    ]
    if missing:
        raise ConfigFileError(config_path, 0, f"missing parameters: {', '.join(missing)}")

    merged: dict[str, Any] = dict(file_settings)
    merged.update({k: v for k, v in (setting_overrides or {}).items() if v is not None})
    try:
        settings = (base_settings or get_settings()).with_overrides(**merged)
    except ValidationError as exc:
        raise ConfigError(f"invalid solver settings: {exc.errors()[0]['msg']}") from exc

    return RunConfig(
        params=validate_params(ModelParams.model_validate(params)),
        settings=settings,
        source=config_path,
    )
