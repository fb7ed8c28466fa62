"""Flat CSV output: header row, LF line endings, 17-significant-digit floats."""

from __future__ import annotations

import csv
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from rich.console import Console

from commodity_nash.grid import fmt_float


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float | np.floating):
        value = float(value)
        return fmt_float(value) if math.isfinite(value) else str(value)
    return str(value)


def _read_header(path: Path) -> list[str] | None:
    with path.open(newline="", encoding="utf-8") as fh:
        return next(csv.reader(fh), None)


@dataclass(slots=True)
class CsvReporter:
    """Write mapping rows to *path*, appending when the file already exists.

    Appending requires the existing header to match the new rows' keys.
    """

    path: Path
    append: bool = True
    console: Console = field(default_factory=lambda: Console(stderr=True))

    def emit(self, rows: Sequence[Mapping[str, Any]]) -> Path:
        if not rows:
            return self.path
        header = list(rows[0])
        self.path.parent.mkdir(parents=True, exist_ok=True)

        mode = "w"
        if self.append and self.path.is_file() and self.path.stat().st_size > 0:
            existing = _read_header(self.path)
            if existing != header:
                raise ValueError(
                    f"{self.path} has columns {existing}, cannot append rows with {header}"
                )
            mode = "a"

        with self.path.open(mode, newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if mode == "w":
                writer.writerow(header)
            for row in rows:
                writer.writerow([format_cell(row.get(key)) for key in header])

        self.console.print(f"[green]CSV written to[/green] {self.path}")
        return self.path
