"""Figure rendering for the report paths (written next to the CSV output)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def render_field_figure(stack, direction, path: str) -> None:
    """All gamma channels side by side, head position and direction overlaid."""
    n = len(stack.grids)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.4), squeeze=False)
    for ax, gamma, grid in zip(axes[0], stack.scales, stack.grids):
        h, w = grid.shape
        ax.imshow(grid, cmap="viridis", vmin=0.0, vmax=1.0,
                  extent=(0, 1, 1, 0), interpolation="nearest")
        ax.plot([stack.head.x], [stack.head.y], "wo", markersize=5)
        scale = 0.18 / max(np.hypot(direction.dx, direction.dy), 1e-9)
        ax.annotate("", xy=(stack.head.x + direction.dx * scale,
                            stack.head.y + direction.dy * scale),
                    xytext=(stack.head.x, stack.head.y),
                    arrowprops=dict(color="white", arrowstyle="->", lw=1.5))
        ax.set_title(f"gamma = {gamma:g}")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_curve_figure(curve, path: str) -> None:
    """Accumulative error curve: fraction of samples under each distance."""
    ts = [t for t, _ in curve]
    fs = [f for _, f in curve]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(ts, fs, lw=2)
    ax.set_xlabel("distance threshold")
    ax.set_ylabel("fraction of samples")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_curves(log: list[dict], path: str) -> None:
    """Per-epoch losses over the whole schedule, stage boundaries marked."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    xs = range(1, len(log) + 1)
    for key, label in (("loss_dir", "direction"), ("loss_heat", "heatmap"),
                       ("loss_total", "total")):
        pts = [(x, row[key]) for x, row in zip(xs, log) if row[key] is not None]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=label, lw=1.6)
    prev_stage = None
    for x, row in zip(xs, log):
        if prev_stage is not None and row["stage"] != prev_stage:
            ax.axvline(x - 0.5, color="gray", ls="--", lw=0.8)
        prev_stage = row["stage"]
    ax.set_xlabel("epoch (all stages)")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
