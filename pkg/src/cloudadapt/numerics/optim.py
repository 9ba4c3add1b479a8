"""AdamW with a polynomial-decay learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import DimensionError, Tensor


def poly_lr(base_lr: float, step: int, total_steps: int, power: float = 1.0) -> float:
    """``base_lr * (1 - step/total_steps) ** power``, clamped at zero."""
    if total_steps <= 0:
        return 0.0
    frac = max(0.0, 1.0 - step / total_steps)
    return base_lr * frac ** power


@dataclass
class OptimizerState:
    lr: float
    total_steps: int
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    power: float = 1.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def current_lr(self) -> float:
        return poly_lr(self.lr, self.step, self.total_steps, self.power)


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimizerState) -> None:
    """One decoupled-weight-decay Adam update; rebinds each ``param.data``."""
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    lr = state.current_lr()
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise DimensionError(f"param {i}: shape {p.shape} vs grad {g.shape}")
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr == 0.0:
            continue
        update = np.sqrt(v / c2)
        update += state.eps
        np.divide(m / c1, update, out=update)
        update += state.weight_decay * p.data
        p.data = p.data - lr * update
