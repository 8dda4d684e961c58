"""Adam optimizer with classic L2 weight decay folded into the gradient."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .errors import NumericError


class AdamState:
    """Per-parameter moment buffers plus the shared step counter.

    Weight decay is applied as ``grad += wd * param`` before the moment
    updates (the classic L2 formulation), not decoupled.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0005):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]


def adam_step(state: AdamState) -> None:
    """One Adam update over ``state.params``, in place."""
    for p in state.params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name or '<unnamed>'} has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for i, p in enumerate(state.params):
        g = p.grad
        if state.weight_decay:
            g = g + state.weight_decay * p.values
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if not np.all(np.isfinite(update)):
            raise NumericError(f"non-finite Adam update for {p.name or '<unnamed>'}")
        p.values -= update
