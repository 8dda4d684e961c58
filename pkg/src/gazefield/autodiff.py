"""Reverse-mode automatic differentiation over dense float64 arrays.

A single module-level tape records every operation whose inputs require
gradients. ``backward`` replays the tape in exact reverse application
order, accumulates gradients into every reachable leaf, and consumes the
tape. All arithmetic is 64-bit; any non-finite forward output raises
immediately rather than propagating silently.

The operation set is deliberately small: exactly what a pair of miniature
convolutional pathways, a cosine/BCE loss stack, and a direction-field
rasterizer need. No broadcasting beyond trailing-bias addition, no
higher-order derivatives.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, TapeError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "constant",
    "parameter",
    "backward",
    "no_grad",
    "zero_grads",
    "op_forward",
    "DIFFERENTIABLE_OPS",
    "add",
    "sub",
    "mul",
    "affine",
    "power",
    "log",
    "relu",
    "sigmoid",
    "matmul",
    "conv2d",
    "upsample_nearest",
    "concat",
    "reshape",
    "mean",
    "tensor_sum",
    "row",
    "l2_normalize",
]


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"tensor {name or '<unnamed>'} holds non-finite values")
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy(), requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(values, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(values, requires_grad=requires_grad, name=name)


def constant(values, name: str = "") -> Tensor:
    return Tensor(values, requires_grad=False, name=name)


def parameter(values, name: str = "") -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


class _TapeEntry:
    __slots__ = ("op", "inputs", "output", "grad_fn")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, grad_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.grad_fn = grad_fn


class Tape:
    """Ordered record of applied operations for one reverse pass."""

    def __init__(self):
        self.entries: list[_TapeEntry] = []

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, grad_fn) -> None:
        self.entries.append(_TapeEntry(op, inputs, output, grad_fn))

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


_TAPE = Tape()
_GRAD_ENABLED = True


def active_tape() -> Tape:
    return _TAPE


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation forward passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def _finish(op: str, inputs: tuple[Tensor, ...], out_values: np.ndarray, grad_fn) -> Tensor:
    if not np.all(np.isfinite(out_values)):
        raise NumericError(f"non-finite output from op '{op}'")
    needs_grad = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.values = out_values
    out.grad = None
    out.requires_grad = needs_grad
    out.name = ""
    if needs_grad:
        _TAPE.record(op, inputs, out, grad_fn)
    return out


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad tensor reachable from ``loss``.

    The tape is consumed: a second backward without new forward work raises
    TapeError. Leaves that took part in recorded ops but do not influence
    the loss receive an all-zero gradient.
    """
    if loss.values.shape != ():
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    entries = _TAPE.entries
    if not entries:
        raise TapeError("tape is empty (already consumed, or loss never recorded)")
    if not any(e.output is loss for e in entries):
        raise TapeError("loss is not on the active tape")

    one = np.ones(())
    loss.grad = one if loss.grad is None else loss.grad + one
    for e in reversed(entries):
        g = e.output.grad
        if g is None:
            continue  # no flow reaches this op's output
        grads = e.grad_fn(g)
        for t, gi in zip(e.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            t.grad = gi if t.grad is None else t.grad + gi
    # leaves that took part in recorded work but got no flow read as zero
    for e in entries:
        for t in e.inputs:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.values)
    _TAPE.clear()


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; ``b`` may also be a trailing-shape bias of ``a``."""
    if a.shape == b.shape:
        def grad_fn(g):
            return g, g
    elif b.shape == a.shape[a.values.ndim - b.values.ndim:]:
        lead = tuple(range(a.values.ndim - b.values.ndim))

        def grad_fn(g):
            return g, g.sum(axis=lead)
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _finish("add", (a, b), a.values + b.values, grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return _finish("sub", (a, b), a.values - b.values, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    return _finish("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def affine(x: Tensor, scale: float = 1.0, shift: float = 0.0) -> Tensor:
    """Scalar affine map ``scale * x + shift``."""
    scale = float(scale)
    return _finish("affine", (x,), scale * x.values + float(shift), lambda g: (g * scale,))


def power(x: Tensor, exponent: float) -> Tensor:
    """Elementwise ``x ** exponent`` for a scalar exponent >= 1.

    Exponents below 1 are rejected: the derivative diverges at 0, and the
    field generator clamps to exactly 0 routinely.
    """
    p = float(exponent)
    if p < 1.0:
        raise ValueError(f"power: exponent must be >= 1, got {p}")
    xv = x.values
    out = xv ** p

    def grad_fn(g):
        if p == 1.0:
            return (g,)
        return (g * p * xv ** (p - 1.0),)

    return _finish("power", (x,), out, grad_fn)


def log(x: Tensor) -> Tensor:
    xv = x.values
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xv)
    return _finish("log", (x,), out, lambda g: (g / xv,))


def relu(x: Tensor) -> Tensor:
    """Clamp at zero. Subgradient at exactly 0 is 0."""
    mask = x.values > 0.0
    return _finish("relu", (x,), np.where(mask, x.values, 0.0), lambda g: (g * mask,))


# sigmoid saturates to exactly 0/1 in float64 around |x| ~ 37; clamp into the
# open interval so downstream log() stays finite.
_SIGMOID_EPS = 1e-15


def sigmoid(x: Tensor) -> Tensor:
    xv = x.values
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)
    np.clip(out, _SIGMOID_EPS, 1.0 - _SIGMOID_EPS, out=out)
    return _finish("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


# ---------------------------------------------------------------------------
# linear algebra and structure
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    return _finish("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    in_shape = x.shape
    try:
        out = x.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {in_shape} as {shape}") from exc
    return _finish("reshape", (x,), out, lambda g: (g.reshape(in_shape),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    vals = [p.values for p in parts]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from exc
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _finish("concat", tuple(parts), out, grad_fn)


def mean(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    in_shape = x.shape
    if axes is None:
        count = x.values.size
        out = x.values.mean()

        def grad_fn(g):
            return (np.full(in_shape, g / count),)
    else:
        axes = tuple(sorted(a % x.values.ndim for a in axes))
        count = int(np.prod([in_shape[a] for a in axes]))
        out = x.values.mean(axis=axes)

        def grad_fn(g):
            return (np.broadcast_to(np.expand_dims(g, axes), in_shape) / count,)

    return _finish("mean", (x,), np.asarray(out), grad_fn)


def tensor_sum(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    in_shape = x.shape
    if axes is None:
        out = x.values.sum()

        def grad_fn(g):
            return (np.full(in_shape, g),)
    else:
        axes = tuple(sorted(a % x.values.ndim for a in axes))
        out = x.values.sum(axis=axes)

        def grad_fn(g):
            return (np.broadcast_to(np.expand_dims(g, axes), in_shape),)

    return _finish("sum", (x,), np.asarray(out), grad_fn)


def row(x: Tensor, index: int) -> Tensor:
    """Extract row ``index`` of a 2-D tensor; gradient scatters back."""
    if x.values.ndim != 2:
        raise ShapeError(f"row expects a 2-D tensor, got {x.shape}")
    i = int(index)
    if not 0 <= i < x.shape[0]:
        raise ShapeError(f"row index {i} out of range for shape {x.shape}")
    out = x.values[i].copy()

    def grad_fn(g):
        gx = np.zeros_like(x.values)
        gx[i] = g
        return (gx,)

    return _finish("row", (x,), out, grad_fn)


def l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize along the last axis: x / sqrt(max(sum(x^2), eps)).

    The epsilon is a floor under the square root, not an addend: healthy
    vectors come out exactly unit length while the zero-vector singularity
    stays bounded.
    """
    xv = x.values
    sq = (xv * xv).sum(axis=-1, keepdims=True)
    active = sq > float(eps)
    inv = 1.0 / np.sqrt(np.maximum(sq, float(eps)))
    out = xv * inv

    def grad_fn(g):
        dot = (g * xv).sum(axis=-1, keepdims=True)
        return (g * inv - active * xv * dot * inv ** 3,)

    return _finish("l2_normalize", (x,), out, grad_fn)


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, Hp, Wp) -> (N, Ho, Wo, C, kh, kw)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride].transpose(0, 2, 3, 1, 4, 5)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation) over NCHW input."""
    if x.values.ndim != 4 or w.values.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d: input channels {c} != kernel channels {cw}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({f},)")
    stride = int(stride)
    padding = int(padding)
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} too large for input {h}x{wd}")

    xp = np.pad(x.values, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride)               # (N, Ho, Wo, C, kh, kw)
    cols2 = cols.reshape(n * ho * wo, c * kh * kw)
    wmat = w.values.reshape(f, c * kh * kw)
    out = (cols2 @ wmat.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.values[None, :, None, None]

    inputs = (x, w) if bias is None else (x, w, bias)

    def grad_fn(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        gw = (gmat.T @ cols2).reshape(f, c, kh, kw)
        gcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                gxp[:, :, ki:ki + stride * ho:stride,
                    kj:kj + stride * wo:stride] += gcols[:, :, :, :, ki, kj]
        gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _finish("conv2d", inputs, out, grad_fn)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour spatial upsampling of an NCHW tensor."""
    if x.values.ndim != 4:
        raise ShapeError(f"upsample_nearest expects 4-D input, got {x.shape}")
    f = int(factor)
    if f < 1:
        raise ShapeError(f"upsample_nearest: factor must be >= 1, got {f}")
    n, c, h, w = x.shape
    out = x.values.repeat(f, axis=2).repeat(f, axis=3)

    def grad_fn(g):
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    return _finish("upsample_nearest", (x,), out, grad_fn)


# ---------------------------------------------------------------------------
# kind-dispatched surface
# ---------------------------------------------------------------------------

_DISPATCH: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "affine": affine,
    "power": power,
    "log": log,
    "relu": relu,
    "sigmoid": sigmoid,
    "matmul": matmul,
    "reshape": reshape,
    "concat": concat,
    "mean": mean,
    "sum": tensor_sum,
    "row": row,
    "l2_normalize": l2_normalize,
    "conv2d": conv2d,
    "upsample_nearest": upsample_nearest,
}

# every kind with a nontrivial derivative, for gradient-check enumeration
DIFFERENTIABLE_OPS: tuple[str, ...] = tuple(_DISPATCH)


def op_forward(kind: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Apply an operation by kind name. Raises on unknown kinds."""
    try:
        fn = _DISPATCH[kind]
    except KeyError:
        raise ValueError(f"unknown operation kind '{kind}'") from None
    attrs = attrs or {}
    if kind == "concat":
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)
