"""Gaze direction fields.

A direction field assigns every image point the probability of being the
gaze point given only the head position and a gaze direction: the clamped
cosine between the ray head->point and the direction, raised to a
sharpness exponent. A stack holds one grid per exponent; larger exponents
give a narrower field-of-view cone.

Coordinates are normalized to [0,1] x [0,1] with x rightward, y downward.
Grid cell (i, j) (row, column) samples the normalized point
((j + 0.5) / width, (i + 0.5) / height).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gridio import write_grid_csv


@dataclass(frozen=True)
class NormalizedPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise ValueError(f"point ({self.x}, {self.y}) outside [0,1]^2")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class Direction:
    dx: float
    dy: float

    def norm(self) -> float:
        return math.hypot(self.dx, self.dy)

    def normalized(self) -> "Direction":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize a zero direction")
        return Direction(self.dx / n, self.dy / n)

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy], dtype=np.float64)


@dataclass
class DirectionFieldStack:
    scales: list[float]
    grids: list[np.ndarray]  # one (height, width) grid per scale
    head: NormalizedPoint


def ray_direction(head: NormalizedPoint, p: NormalizedPoint) -> Direction:
    """Unnormalized ray from the head position to a point (may be zero)."""
    return Direction(p.x - head.x, p.y - head.y)


def field_value(head: NormalizedPoint, p: NormalizedPoint, direction: Direction) -> float:
    """Clamped-cosine probability that ``p`` is the gaze point.

    Zero when the angle between the ray and the direction exceeds 90
    degrees, and zero by convention when ``p`` coincides with the head.
    """
    dn = direction.norm()
    if dn == 0.0:
        raise ValueError("direction must be non-zero")
    g = ray_direction(head, p)
    gn = g.norm()
    if gn == 0.0:
        return 0.0
    cos = (g.dx * direction.dx + g.dy * direction.dy) / (gn * dn)
    return max(cos, 0.0)


def field_value_pow(head: NormalizedPoint, p: NormalizedPoint,
                    direction: Direction, gamma: float) -> float:
    if gamma < 1.0:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    return field_value(head, p, direction) ** gamma


def cell_centers(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized x and y coordinates of cell centers."""
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    return xs, ys


def unit_ray_grid(head: NormalizedPoint | np.ndarray, width: int, height: int) -> np.ndarray:
    """(height*width, 2) unit rays from the head to every cell center.

    The row for a cell whose center coincides exactly with the head is all
    zeros, which makes the field value there 0 with zero gradient.
    """
    hx, hy = (head.x, head.y) if isinstance(head, NormalizedPoint) else (float(head[0]), float(head[1]))
    xs, ys = cell_centers(width, height)
    gx = np.broadcast_to(xs[None, :] - hx, (height, width))
    gy = np.broadcast_to(ys[:, None] - hy, (height, width))
    g = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    u = g / safe
    u[norms[:, 0] == 0.0] = 0.0
    return u


def _validate_stack_args(width: int, height: int, gammas) -> list[float]:
    if width < 2 or height < 2:
        raise ValueError(f"degenerate grid extents {width}x{height}")
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ValueError("at least one gamma is required")
    for g in gammas:
        if g < 1.0:
            raise ValueError(f"gamma must be >= 1, got {g}")
    return gammas


def build_field_stack(head: NormalizedPoint | np.ndarray, direction: Tensor,
                      width: int, height: int, gammas) -> Tensor:
    """Differentiable field stack, shape (len(gammas), height, width).

    ``direction`` is a shape-(2,) tensor on the tape; the stack carries
    gradients back through the per-cell cosine and the direction
    normalization. Clamped cells pass zero gradient.
    """
    gammas = _validate_stack_args(width, height, gammas)
    if direction.shape != (2,):
        raise ValueError(f"direction tensor must have shape (2,), got {direction.shape}")
    rays = ad.constant(unit_ray_grid(head, width, height))
    d_unit = ad.l2_normalize(ad.reshape(direction, (1, 2)))
    cos = ad.matmul(rays, ad.reshape(d_unit, (2, 1)))   # (H*W, 1)
    clamped = ad.relu(cos)
    channels = [ad.reshape(ad.power(clamped, g), (1, height, width)) for g in gammas]
    return ad.concat(channels, axis=0)


def evaluate_field_stack(head: NormalizedPoint, direction: Direction,
                         width: int, height: int, gammas) -> DirectionFieldStack:
    """Plain-array stack for inspection and dumps."""
    if direction.norm() == 0.0:
        raise ValueError("direction must be non-zero")
    with ad.no_grad():
        t = build_field_stack(head, ad.constant(direction.as_array()), width, height, gammas)
    return DirectionFieldStack(
        scales=[float(g) for g in gammas],
        grids=[t.values[i].copy() for i in range(len(gammas))],
        head=head,
    )


def _format_gamma(g: float) -> str:
    return f"{g:g}".replace(".", "p")


def write_field_csvs(stack: DirectionFieldStack, direction: Direction,
                     out_dir: str, basename: str = "field") -> list[str]:
    """One CSV per gamma channel; header carries head, direction, gamma."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for gamma, grid in zip(stack.scales, stack.grids):
        path = os.path.join(out_dir, f"{basename}_gamma{_format_gamma(gamma)}.csv")
        write_grid_csv(path, grid, header={
            "head_x": stack.head.x, "head_y": stack.head.y,
            "dir_x": direction.dx, "dir_y": direction.dy,
            "gamma": f"{gamma:g}",
        })
        paths.append(path)
    return paths
