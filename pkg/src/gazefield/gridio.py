"""CSV grid files: one row per grid row, '#' comment header lines."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def write_grid_csv(path: str, grid: np.ndarray, header: dict | None = None) -> None:
    if grid.ndim != 2:
        raise ValueError(f"grid must be 2-D, got shape {grid.shape}")
    with open(path, "w") as fh:
        if header:
            items = " ".join(f"{k}={v}" for k, v in header.items())
            fh.write(f"# {items}\n")
        for row in grid:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_grid_csv(path: str) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                row = [float(v) for v in line.split(",")]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: not a numeric row") from exc
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{lineno}: ragged row ({len(row)} vs {width} columns)")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no grid rows")
    return np.asarray(rows, dtype=np.float64)
