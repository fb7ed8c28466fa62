"""Two-axis parameter sweeps of the agreement quantities.

Each grid point re-solves the agreement with identical solver settings.  Point
failures are recorded as a :class:`PointStatus` instead of aborting the sweep,
and rows always come back in row-major order (axis 2 varies fastest),
whatever order the workers finish in.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import structlog

from commodity_nash.config import (
    Entry,
    SolverSettings,
    param_name,
    parse_float,
    parse_kv_file,
)
from commodity_nash.errors import (
    A2Violation,
    BlowUp,
    ConfigError,
    ConfigFileError,
    DegenerateAgreement,
    GridParity,
    NoSignChange,
    SolverError,
)
from commodity_nash.model import ValidatedParams
from commodity_nash.pricing import AgreementResult, find_lambda_star
from commodity_nash.types import PointStatus, Quantity, Spacing

logger = structlog.get_logger()

# solved for at every point, never swept
_UNSWEEPABLE = frozenset({"lam", "F"})


@dataclass(frozen=True, slots=True)
class Axis:
    name: str
    lo: float
    hi: float
    n_points: int
    spacing: Spacing = Spacing.LINEAR

    def __post_init__(self) -> None:
        if self.n_points < 2:
            raise ConfigError(f"axis {self.name}: n_points must be >= 2, got {self.n_points}")
        if self.spacing is Spacing.LOG and not (self.lo > 0 and self.hi > 0):
            raise ConfigError(f"axis {self.name}: log spacing needs positive bounds")

    def values(self) -> np.ndarray:
        if self.spacing is Spacing.LOG:
            return np.geomspace(self.lo, self.hi, self.n_points)
        return np.linspace(self.lo, self.hi, self.n_points)


@dataclass(frozen=True, slots=True)
class SweepSpec:
    axis1: Axis
    axis2: Axis
    fixed: dict[str, float] = field(default_factory=dict)
    quantities: tuple[Quantity, ...] = tuple(Quantity)
    output: Path = Path("sweep.csv")
    base: Path | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.axis1.n_points, self.axis2.n_points

    def points(self) -> list[tuple[float, float]]:
        """Grid points in row-major order."""
        return [(float(a), float(b)) for a in self.axis1.values() for b in self.axis2.values()]


# ---------------------------------------------------------------------------
# Spec files
# ---------------------------------------------------------------------------


def _parse_axis(entry: Entry, path: Path) -> Axis:
    parts = [part.strip() for part in entry.value.split(",")]
    if len(parts) not in (4, 5):
        raise ConfigFileError(
            path, entry.line, f"{entry.key}: expected 'name, lo, hi, n_points[, linear|log]'"
        )
    name = param_name(parts[0])
    if name is None:
        raise ConfigFileError(path, entry.line, f"{entry.key}: unknown parameter {parts[0]!r}")
    if name in _UNSWEEPABLE:
        raise ConfigFileError(path, entry.line, f"{entry.key}: {parts[0]} is solved for, not swept")
    try:
        lo, hi = float(parts[1]), float(parts[2])
        n_points = int(parts[3])
        spacing = Spacing(parts[4]) if len(parts) == 5 else Spacing.LINEAR
    except ValueError as exc:
        raise ConfigFileError(path, entry.line, f"{entry.key}: {exc}") from None
    try:
        return Axis(name, lo, hi, n_points, spacing)
    except ConfigError as exc:
        raise ConfigFileError(path, entry.line, str(exc)) from None


def load_sweep_spec(path: Path | str) -> SweepSpec:
    """Read a sweep definition file.

    ``axis1``/``axis2`` are ``name, lo, hi, n_points[, linear|log]``;
    ``fixed.<name> = value`` overrides the base parameters; ``quantities`` is a
    comma-separated subset of :class:`Quantity`; ``output`` and ``base`` (the
    base parameter file) resolve relative to the sweep file.

    Raises:
        ConfigFileError: malformed or unknown entries.
    """
    path = Path(path)
    entries = parse_kv_file(path)
    axes: dict[str, Axis] = {}
    fixed: dict[str, float] = {}
    quantities: tuple[Quantity, ...] = tuple(Quantity)
    output = path.with_suffix(".csv").name
    base: Path | None = None

    for entry in entries.values():
        if entry.key in ("axis1", "axis2"):
            axes[entry.key] = _parse_axis(entry, path)
        elif entry.key.startswith("fixed."):
            name = param_name(entry.key.removeprefix("fixed."))
            if name is None or name in _UNSWEEPABLE:
                raise ConfigFileError(path, entry.line, f"cannot fix {entry.key!r}")
            fixed[name] = parse_float(entry, path)
        elif entry.key == "quantities":
            try:
                quantities = tuple(Quantity(q.strip()) for q in entry.value.split(","))
            except ValueError as exc:
                raise ConfigFileError(path, entry.line, str(exc)) from None
        elif entry.key == "output":
            output = entry.value
        elif entry.key == "base":
            base = path.parent / entry.value
        else:
            raise ConfigFileError(path, entry.line, f"unknown key {entry.key!r}")

    for key in ("axis1", "axis2"):
        if key not in axes:
            raise ConfigFileError(path, 0, f"missing {key}")
    if axes["axis1"].name == axes["axis2"].name:
        raise ConfigFileError(path, 0, "axis1 and axis2 sweep the same parameter")
    clash = {axes["axis1"].name, axes["axis2"].name} & fixed.keys()
    if clash:
        raise ConfigFileError(path, 0, f"swept parameters also fixed: {', '.join(sorted(clash))}")

    return SweepSpec(
        axis1=axes["axis1"],
        axis2=axes["axis2"],
        fixed=fixed,
        quantities=quantities,
        output=path.parent / output,
        base=base,
    )


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class SweepRow:
    x1: float
    x2: float
    status: PointStatus
    values: dict[Quantity, float] = field(default_factory=dict)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is PointStatus.OK

    def value(self, quantity: Quantity) -> float:
        return self.values.get(quantity, math.nan)


@dataclass(frozen=True, slots=True)
class SweepResult:
    spec: SweepSpec
    rows: tuple[SweepRow, ...]
    elapsed: float = 0.0

    @property
    def summary(self) -> dict[PointStatus, int]:
        counts = dict.fromkeys(PointStatus, 0)
        for row in self.rows:
            counts[row.status] += 1
        return counts

    def grid(self, quantity: Quantity) -> np.ndarray:
        """``(n1, n2)`` array of *quantity*, NaN at failed points."""
        return np.array([row.value(quantity) for row in self.rows]).reshape(self.spec.shape)

    def as_rows(self) -> list[dict[str, Any]]:
        """CSV rows; failed points leave the quantity cells empty."""
        a1, a2 = self.spec.axis1.name, self.spec.axis2.name
        out = []
        for row in self.rows:
            record: dict[str, Any] = {a1: row.x1, a2: row.x2}
            for q in self.spec.quantities:
                record[str(q)] = row.values.get(q) if row.ok else None
            record["status"] = str(row.status)
            out.append(record)
        return out


def _status_for(exc: Exception) -> PointStatus:
    match exc:
        case BlowUp():
            return PointStatus.BLOW_UP
        case A2Violation():
            return PointStatus.A2_VIOLATION
        case NoSignChange():
            return PointStatus.NO_SIGN_CHANGE
        case DegenerateAgreement():
            return PointStatus.DEGENERATE
        case ConfigError():
            return PointStatus.INVALID_PARAMS
    return PointStatus.SOLVER_ERROR


def _quantities(result: AgreementResult) -> dict[Quantity, float]:
    return {
        Quantity.F_STAR: result.F_star,
        Quantity.LAMBDA_STAR: result.lambda_star,
        Quantity.UNIT_PRICE: result.unit_price,
        Quantity.PREMIUM: result.risk_premium,
        Quantity.J_P_STAR_AT_AGREEMENT: result.J_p_at_agreement,
    }


def solve_point(
    base: ValidatedParams,
    changes: dict[str, float],
    settings: SolverSettings,
    x1: float,
    x2: float,
) -> SweepRow:
    """Agreement at one grid point; errors become a status."""
    try:
        params = base.replace(**changes)
        result = find_lambda_star(params, settings=settings)
    except (ConfigError, SolverError) as exc:
        status = _status_for(exc)
        logger.debug("sweep_point_failed", x1=x1, x2=x2, status=str(status), error=str(exc))
        return SweepRow(x1, x2, status, message=str(exc))
    return SweepRow(x1, x2, PointStatus.OK, _quantities(result))


def _solve_task(
    task: tuple[ValidatedParams, dict[str, float], SolverSettings, float, float],
) -> SweepRow:
    return solve_point(*task)


def run_sweep(
    spec: SweepSpec,
    base: ValidatedParams,
    settings: SolverSettings,
    workers: int | None = None,
) -> SweepResult:
    """Solve the agreement at every grid point of *spec*.

    Points are independent.  With more than one worker they go to a process
    pool, and rows come back in row-major order either way.  A failing point
    keeps its row, with empty quantities and a status naming the failure; only
    an odd step count is raised up front, as :class:`GridParity`, because it
    would fail every point alike.
    """
    if settings.n_steps % 2:
        raise GridParity(settings.n_steps)
    workers = workers or settings.workers
    a1, a2 = spec.axis1.name, spec.axis2.name
    tasks = [
        (base, {**spec.fixed, a1: x1, a2: x2}, settings, x1, x2) for x1, x2 in spec.points()
    ]
    logger.info("sweep_started", axis1=a1, axis2=a2, points=len(tasks), workers=workers)

    start = time.monotonic()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = tuple(pool.map(_solve_task, tasks))
    else:
        rows = tuple(_solve_task(task) for task in tasks)

    result = SweepResult(spec=spec, rows=rows, elapsed=time.monotonic() - start)
    logger.info(
        "sweep_finished",
        elapsed=round(result.elapsed, 2),
        **{str(status): count for status, count in result.summary.items() if count},
    )
    return result
