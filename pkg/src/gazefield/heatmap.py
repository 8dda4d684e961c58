"""Gaussian ground-truth heatmap encoding and argmax decoding.

Heatmaps are plain (height, width) float64 arrays. A ground-truth map
places an unnormalized-peak Gaussian at the gaze point: the peak value is
1/(sqrt(2*pi)*sigma), deliberately not rescaled to 1. Cell coordinates
use the same half-pixel convention as the direction fields: normalized x
maps to column coordinate x*width - 0.5.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError
from .field import NormalizedPoint
from .gridio import write_grid_csv


def gaussian_peak(sigma: float) -> float:
    return 1.0 / (math.sqrt(2.0 * math.pi) * sigma)


def encode_gt(gaze: NormalizedPoint, width: int, height: int, sigma: float = 3.0) -> np.ndarray:
    """Gaussian heatmap centered on the gaze point, in cell units."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not (0.0 <= gaze.x <= 1.0 and 0.0 <= gaze.y <= 1.0):
        raise DataError(f"gaze point ({gaze.x}, {gaze.y}) outside [0,1]^2")
    gx = gaze.x * width - 0.5
    gy = gaze.y * height - 0.5
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    d2 = (cols[None, :] - gx) ** 2 + (rows[:, None] - gy) ** 2
    return gaussian_peak(sigma) * np.exp(-d2 / (2.0 * sigma * sigma))


def decode_argmax(heatmap: np.ndarray) -> NormalizedPoint:
    """Center of the maximal cell; ties break to the smallest (row, col)."""
    if heatmap.size == 0:
        raise ValueError("empty heatmap")
    h, w = heatmap.shape
    flat = int(np.argmax(heatmap))
    r, c = divmod(flat, w)
    return NormalizedPoint((c + 0.5) / w, (r + 0.5) / h)


def write_heatmap_csv(path: str, heatmap: np.ndarray, header: dict | None = None) -> None:
    write_grid_csv(path, heatmap, header=header)
