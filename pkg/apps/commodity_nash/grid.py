"""Uniform time grids, grid functions and the fixed-step RK4 integrator.

Integrators work on the *half grid* ``t_0, t_0 + h/2, t_1, ...`` (2n+1 points):
stage index ``2i`` is node ``i`` and ``2i + 1`` the midpoint of step ``i``, so
time-dependent coefficients can be tabulated once, vectorised, instead of being
re-evaluated at every RK4 stage.
"""

from __future__ import annotations

import csv
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import CubicHermiteSpline

FloatArray = NDArray[np.float64]

# rhs(stage_index, state) -> derivative
StageRHS = Callable[[int, FloatArray], FloatArray]
Guard = Callable[[float, FloatArray], None]


def fmt_float(value: float) -> str:
    return f"{value:.17g}"


@dataclass(frozen=True, slots=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_n = T``."""

    horizon: float
    n_steps: int

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be positive, got {self.n_steps}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def step(self) -> float:
        return self.horizon / self.n_steps

    @property
    def nodes(self) -> FloatArray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    @property
    def half_nodes(self) -> FloatArray:
        return np.linspace(0.0, self.horizon, 2 * self.n_steps + 1)

    def node_index(self, t: float) -> int:
        """Index of the node closest to *t*."""
        return int(round(t / self.step))

    def refine(self, factor: int) -> TimeGrid:
        return TimeGrid(self.horizon, self.n_steps * factor)


@dataclass(frozen=True, slots=True, eq=False)
class GridFunction:
    """Values of a (scalar, vector or matrix valued) function at grid nodes.

    ``derivs`` holds the ODE right-hand side at each node and drives the cubic
    Hermite interpolation used between nodes.
    """

    grid: TimeGrid
    values: FloatArray
    derivs: FloatArray
    names: tuple[str, ...] = ()
    _spline: CubicHermiteSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        expected = self.grid.n_steps + 1
        if self.values.shape[0] != expected or self.derivs.shape != self.values.shape:
            raise ValueError(
                f"grid function needs {expected} nodes with matching derivatives, "
                f"got values {self.values.shape} and derivs {self.derivs.shape}"
            )
        spline = CubicHermiteSpline(self.grid.nodes, self.values, self.derivs, axis=0)
        object.__setattr__(self, "_spline", spline)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape[1:]

    def __call__(self, t: ArrayLike) -> FloatArray:
        return self._spline(t)

    def at_node(self, i: int) -> FloatArray:
        return self.values[i]

    @property
    def initial(self) -> FloatArray:
        return self.values[0]

    @property
    def terminal(self) -> FloatArray:
        return self.values[-1]

    def on_half_grid(self) -> FloatArray:
        """Node values at even stage indices, Hermite midpoints at odd ones."""
        out = np.empty((2 * self.grid.n_steps + 1, *self.shape))
        out[0::2] = self.values
        mids = self.grid.nodes[:-1] + 0.5 * self.grid.step
        out[1::2] = self._spline(mids)
        return out

    def component(self, *index: int, name: str | None = None) -> GridFunction:
        """Scalar grid function of one entry, e.g. ``pi.component(0, 1)``."""
        sel = (slice(None), *index)
        label = name or "_".join(str(i + 1) for i in index)
        return GridFunction(self.grid, self.values[sel], self.derivs[sel], (label,))

    def combine(self, other: GridFunction, weight: float) -> GridFunction:
        """``self + weight * (other - self)`` node by node."""
        if other.grid != self.grid:
            raise ValueError("grid functions live on different grids")
        return GridFunction(
            self.grid,
            self.values + weight * (other.values - self.values),
            self.derivs + weight * (other.derivs - self.derivs),
            self.names,
        )

    def entry_names(self) -> list[str]:
        if len(self.names) == int(np.prod(self.shape)):
            return list(self.names)
        if not self.shape:
            return [self.names[0] if self.names else "value"]
        base = self.names[0] if self.names else "v"
        return [f"{base}{''.join(str(i + 1) for i in idx)}" for idx in np.ndindex(self.shape)]

    def to_csv(self, path: Path | str) -> Path:
        """Write ``t,<entry names>`` plus one row per node."""
        return write_columns(
            path,
            self.grid,
            dict(zip(self.entry_names(), self.values.reshape(len(self.values), -1).T, strict=True)),
        )


def from_samples(grid: TimeGrid, values: FloatArray, names: Sequence[str] = ()) -> GridFunction:
    """Grid function whose node derivatives come from finite differences.

    Used for algebraic quantities (no ODE right-hand side available).
    """
    derivs = np.gradient(values, grid.step, axis=0, edge_order=2)
    return GridFunction(grid, values, derivs, tuple(names))


def write_columns(path: Path | str, grid: TimeGrid, columns: dict[str, FloatArray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nodes = grid.nodes
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *columns])
        for i, t in enumerate(nodes):
            writer.writerow([fmt_float(t), *(fmt_float(col[i]) for col in columns.values())])
    return path


# ---------------------------------------------------------------------------
# Integrator
# ---------------------------------------------------------------------------


def rk4(
    rhs: StageRHS,
    y0: ArrayLike,
    grid: TimeGrid,
    *,
    backward: bool = False,
    guard: Guard | None = None,
) -> tuple[FloatArray, FloatArray]:
    """Classical fixed-step RK4 over *grid*.

    With ``backward=True`` *y0* is the value at ``T`` and the system is marched
    towards ``t = 0`` (the time-reversed system integrated forward).  Returns
    node values and the right-hand side at each node, both indexed by node.
    """
    n = grid.n_steps
    h = grid.step
    y = np.array(y0, dtype=float)
    values = np.empty((n + 1, *y.shape))
    derivs = np.empty_like(values)

    node = n if backward else 0
    direction = -1 if backward else 1
    dt = direction * h
    values[node] = y
    for _ in range(n):
        s = 2 * node
        k1 = rhs(s, y)
        derivs[node] = k1
        k2 = rhs(s + direction, y + 0.5 * dt * k1)
        k3 = rhs(s + direction, y + 0.5 * dt * k2)
        k4 = rhs(s + 2 * direction, y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        node += direction
        values[node] = y
        if guard is not None:
            guard(node * h, y)
    derivs[node] = rhs(2 * node, y)
    return values, derivs
