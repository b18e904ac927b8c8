"""AdamW with decoupled weight decay, a one-cycle schedule, and norm clipping."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .nn import Parameter


class AdamW:
    def __init__(self, params: Sequence[Parameter], lr: float = 2e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-5):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if lr == 0.0:
                continue
            p.data *= 1.0 - lr * self.weight_decay
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


def one_cycle_lr(step: int, total_steps: int, max_lr: float, pct_start: float = 0.05,
                 div_factor: float = 25.0, final_div_factor: float = 1e4) -> float:
    """Linear warm-up to ``max_lr`` then linear decay (RAFT-style one-cycle)."""
    initial = max_lr / div_factor
    final = initial / final_div_factor
    warm = max(1, int(round(pct_start * total_steps)))
    if step < warm:
        return initial + (max_lr - initial) * step / warm
    frac = min(1.0, (step - warm) / max(1, total_steps - warm))
    return max_lr + (final - max_lr) * frac


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if total > max_norm and total > 0:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total
