"""Central finite-difference gradient checking.

Compares analytic reverse-mode gradients against (f(x+h) - f(x-h)) / 2h at
64-bit precision. Used by the test suite and the ``gradcheck`` CLI command.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def numeric_gradients(forward: Callable[[], Tensor], leaves: Sequence[Tensor],
                      step: float = DEFAULT_STEP) -> list[np.ndarray]:
    """Central finite differences of a scalar-valued forward closure."""
    grads = []
    for leaf in leaves:
        g = np.zeros_like(leaf.values)
        flat = leaf.values.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with ad.no_grad():
                f_plus = forward().item()
            flat[i] = orig - step
            with ad.no_grad():
                f_minus = forward().item()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        grads.append(g)
    return grads


def analytic_gradients(forward: Callable[[], Tensor], leaves: Sequence[Tensor]) -> list[np.ndarray]:
    ad.active_tape().clear()
    ad.zero_grads(leaves)
    loss = forward()
    ad.backward(loss)
    out = [np.zeros_like(l.values) if l.grad is None else l.grad.copy() for l in leaves]
    ad.zero_grads(leaves)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradients(name: str, forward: Callable[[], Tensor], leaves: Sequence[Tensor],
                    step: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOLERANCE,
                    corrupt: Callable[[list[np.ndarray]], None] | None = None) -> CheckResult:
    """Run one analytic-vs-numeric comparison.

    ``corrupt`` is a fault-injection hook for the test suite: it may mutate
    the analytic gradients before comparison so that a broken backward pass
    is demonstrably caught.
    """
    analytic = analytic_gradients(forward, leaves)
    if corrupt is not None:
        corrupt(analytic)
    numeric = numeric_gradients(forward, leaves, step=step)
    err = max(relative_error(a, n) for a, n in zip(analytic, numeric))
    return CheckResult(name=name, max_rel_error=err, tolerance=tolerance)


# ---------------------------------------------------------------------------
# per-op check suite
# ---------------------------------------------------------------------------


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    # keep inputs off the relu kink so finite differences stay two-sided
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _op_case(kind: str, rng: np.random.Generator):
    """Returns (forward closure, leaves) exercising one op kind."""
    if kind in ("add", "sub", "mul"):
        a = ad.parameter(rng.standard_normal((3, 4)))
        b = ad.parameter(rng.standard_normal((3, 4)))
        return lambda: ad.mean(ad.op_forward(kind, [a, b])), [a, b]
    if kind == "affine":
        x = ad.parameter(rng.standard_normal((3, 4)))
        return lambda: ad.mean(ad.affine(x, scale=-1.7, shift=0.4)), [x]
    if kind == "power":
        x = ad.parameter(rng.uniform(0.1, 0.9, size=(3, 4)))
        return lambda: ad.mean(ad.power(x, 2.5)), [x]
    if kind == "log":
        x = ad.parameter(rng.uniform(0.2, 2.0, size=(3, 4)))
        return lambda: ad.mean(ad.log(x)), [x]
    if kind == "relu":
        x = ad.parameter(_away_from_zero(rng, (4, 5)))
        return lambda: ad.mean(ad.relu(x)), [x]
    if kind == "sigmoid":
        x = ad.parameter(rng.standard_normal((3, 4)))
        return lambda: ad.mean(ad.sigmoid(x)), [x]
    if kind == "matmul":
        a = ad.parameter(rng.standard_normal((3, 4)))
        b = ad.parameter(rng.standard_normal((4, 2)))
        return lambda: ad.mean(ad.matmul(a, b)), [a, b]
    if kind == "reshape":
        x = ad.parameter(rng.standard_normal((2, 6)))
        w = ad.constant(rng.standard_normal((3, 4)))
        return lambda: ad.mean(ad.mul(ad.reshape(x, (3, 4)), w)), [x]
    if kind == "concat":
        a = ad.parameter(rng.standard_normal((2, 3)))
        b = ad.parameter(rng.standard_normal((2, 2)))
        scale = ad.constant(rng.standard_normal((2, 5)))
        return lambda: ad.mean(ad.mul(ad.concat([a, b], axis=1), scale)), [a, b]
    if kind == "mean":
        x = ad.parameter(rng.standard_normal((2, 3, 4)))
        w = ad.constant(rng.standard_normal((2, 4)))
        return lambda: ad.mean(ad.mul(ad.mean(x, axes=(1,)), w)), [x]
    if kind == "sum":
        x = ad.parameter(rng.standard_normal((2, 3, 4)))
        w = ad.constant(rng.standard_normal((2, 3)))
        return lambda: ad.mean(ad.mul(ad.tensor_sum(x, axes=(2,)), w)), [x]
    if kind == "row":
        x = ad.parameter(rng.standard_normal((4, 3)))
        w = ad.constant(rng.standard_normal(3))
        return lambda: ad.mean(ad.mul(ad.row(x, 2), w)), [x]
    if kind == "l2_normalize":
        x = ad.parameter(rng.standard_normal((3, 4)) + 0.5)
        w = ad.constant(rng.standard_normal((3, 4)))
        return lambda: ad.mean(ad.mul(ad.l2_normalize(x), w)), [x]
    if kind == "conv2d":
        x = ad.parameter(rng.standard_normal((2, 2, 5, 5)))
        w = ad.parameter(rng.standard_normal((3, 2, 3, 3)))
        b = ad.parameter(rng.standard_normal(3))
        return lambda: ad.mean(ad.conv2d(x, w, b, stride=2, padding=1)), [x, w, b]
    if kind == "upsample_nearest":
        x = ad.parameter(rng.standard_normal((1, 2, 3, 3)))
        w = ad.constant(rng.standard_normal((1, 2, 6, 6)))
        return lambda: ad.mean(ad.mul(ad.upsample_nearest(x, 2), w)), [x]
    raise ValueError(f"no gradcheck case for op kind '{kind}'")


def run_op_suite(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE,
                 corrupt_kind: str | None = None) -> list[CheckResult]:
    """One finite-difference check per differentiable op kind.

    ``corrupt_kind`` perturbs the named op's analytic gradient (fault
    injection used to prove the harness actually fails on bad gradients).
    """
    rng = np.random.default_rng(seed)
    results = []
    for kind in ad.DIFFERENTIABLE_OPS:
        forward, leaves = _op_case(kind, rng)
        corrupt = None
        if kind == corrupt_kind:
            def corrupt(grads):
                grads[0] = grads[0] + 0.5
        results.append(check_gradients(kind, forward, leaves, tolerance=tolerance, corrupt=corrupt))
    return results


# ---------------------------------------------------------------------------
# losses, field stack, and a tiny end-to-end model
# ---------------------------------------------------------------------------


def randomize_biases(model, rng) -> None:
    """Move pre-activations off the exact ReLU kink before checking.

    Finite differences are only meaningful at differentiable points; with
    zero biases, fully clamped input patches leave pre-activations sitting
    exactly on the kink.
    """
    for name, p in model.params.items():
        if name.endswith(".b"):
            p.values[...] = rng.uniform(0.05, 0.15, size=p.shape) * rng.choice([-1, 1], size=p.shape)


def run_model_suite(seed: int = 0) -> list[CheckResult]:
    """Checks for both losses, the field stack, and a tiny two-pathway model."""
    from .field import build_field_stack
    from .model import (DirectionPathwayConfig, GazeModel, HeatmapPathwayConfig,
                        TrainConfig, direction_loss, heatmap_loss, total_loss)

    rng = np.random.default_rng(seed)
    results = []

    d_hat = ad.parameter(rng.standard_normal((3, 2)))
    d_true = rng.standard_normal((3, 2))
    results.append(check_gradients(
        "direction_loss", lambda: direction_loss(d_true, d_hat), [d_hat]))

    logits = ad.parameter(rng.standard_normal((2, 1, 4, 4)))
    gt = rng.uniform(0.0, 0.14, size=(2, 1, 4, 4))
    results.append(check_gradients(
        "heatmap_loss", lambda: heatmap_loss(gt, ad.sigmoid(logits)), [logits]))

    direction = ad.parameter(np.array([0.8, -0.6]))
    head = rng.uniform(0.3, 0.7, size=2)
    weights = ad.constant(rng.uniform(0.1, 1.0, size=(3, 6, 6)))
    results.append(check_gradients(
        "field_stack",
        lambda: ad.mean(ad.mul(build_field_stack(head, direction, 6, 6, [5.0, 2.0, 1.0]), weights)),
        [direction]))

    cfg = TrainConfig(
        seed=seed, scene_resolution=8, heatmap_resolution=2, crop_resolution=8,
        gammas=(2.0, 1.0),
        direction=DirectionPathwayConfig(crop_channels=(2, 3, 4),
                                         position_widths=(3, 3, 3), fusion_width=4),
        heatmap=HeatmapPathwayConfig(encoder_channels=(2, 3, 4), decoder_channels=(3, 2)))
    model = GazeModel(cfg, rng=np.random.default_rng(seed + 1))
    randomize_biases(model, rng)
    crops = rng.random((2, 3, 8, 8))
    positions = rng.uniform(0.3, 0.7, size=(2, 2))
    scenes = rng.random((2, 3, 8, 8))
    heads = positions.copy()
    d_gt = rng.standard_normal((2, 2))
    hm_gt = rng.uniform(0.01, 0.13, size=(2, 1, 2, 2))

    def end_to_end():
        d, pred = model.forward(crops, positions, scenes, heads)
        return total_loss(direction_loss(d_gt, d), heatmap_loss(hm_gt, pred), 0.5)

    results.append(check_gradients("end_to_end_model", end_to_end,
                                   model.all_parameters(), tolerance=1e-3))
    return results


def run_full_suite(seed: int = 0, corrupt_kind: str | None = None) -> list[CheckResult]:
    """Every op kind once, both losses, the field stack, end-to-end model."""
    return run_op_suite(seed=seed, corrupt_kind=corrupt_kind) + run_model_suite(seed=seed)
