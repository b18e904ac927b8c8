"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Largest relative error between backprop and central differences.

    ``f`` maps ``inputs`` to a scalar tensor. Every coordinate of every input
    with ``requires_grad`` is perturbed by ``eps``; the error at a coordinate is
    ``|analytic - numeric| / max(1e-8, |numeric|)``. Inputs should be float64.
    """
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
    out = f(*inputs)
    if out.size != 1:
        raise ValueError(f"f must return a scalar, got shape {out.shape}")
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("f is not finite at the given inputs")
    out.backward()

    worst = 0.0
    with no_grad():
        for t in inputs:
            if not t.requires_grad:
                continue
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            ana = analytic.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(f(*inputs).data.sum())
                flat[i] = orig - eps
                lo = float(f(*inputs).data.sum())
                flat[i] = orig
                if not (np.isfinite(hi) and np.isfinite(lo)):
                    raise FloatingPointError(f"f is not finite near coordinate {i}")
                numeric = (hi - lo) / (2 * eps)
                err = abs(ana[i] - numeric) / max(1e-8, abs(numeric))
                worst = max(worst, err)
    return worst
