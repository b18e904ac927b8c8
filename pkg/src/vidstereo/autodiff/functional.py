"""Array-level differentiable ops: convolution, softmax, padding, patch unfolding."""

from __future__ import annotations

import itertools
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, make_result


def _per_axis(value, n: int) -> tuple[int, ...]:
    if isinstance(value, int):
        return (value,) * n
    value = tuple(int(v) for v in value)
    if len(value) != n:
        raise ValueError(f"expected {n} values, got {value}")
    return value


def conv(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """N-d cross-correlation (N = 2 or 3) with zero padding.

    ``x`` is ``[B, C, *spatial]``, ``weight`` is ``[O, C, *kernel]``. Implemented
    as im2col followed by one matrix product per batch item.
    """
    n = weight.ndim - 2
    if x.ndim != n + 2:
        raise ShapeError(f"conv{n}d expects a {n + 2}-d input, got shape {x.shape}")
    B, C = x.shape[:2]
    O, Cw = weight.shape[:2]
    if C != Cw:
        raise ShapeError(f"kernel expects {Cw} input channels, input has {C} (shapes {weight.shape}, {x.shape})")
    ks = weight.shape[2:]
    stride = _per_axis(stride, n)
    padding = _per_axis(padding, n)

    xd = x.data
    if any(padding):
        xd = np.pad(xd, [(0, 0), (0, 0)] + [(p, p) for p in padding])
    padded = xd.shape
    for i in range(n):
        if padded[2 + i] < ks[i]:
            raise ValueError(f"kernel {ks} larger than padded input {padded[2:]}")
    out_sp = tuple((padded[2 + i] - ks[i]) // stride[i] + 1 for i in range(n))
    P = math.prod(out_sp)

    pointwise = all(k == 1 for k in ks) and all(s == 1 for s in stride)
    if pointwise:
        cols = xd.reshape(B, C, P)
    else:
        win = sliding_window_view(xd, ks, axis=tuple(range(2, 2 + n)))
        win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
        perm = (0, 1) + tuple(range(2 + n, 2 + 2 * n)) + tuple(range(2, 2 + n))
        cols = win.transpose(perm).reshape(B, C * math.prod(ks), P)

    wmat = weight.data.reshape(O, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape((B, O) + out_sp)

    def backward(g):
        g2 = g.reshape(B, O, P)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = g2[0] @ cols[0].T
            for b in range(1, B):
                gw += g2[b] @ cols[b].T
            gw = gw.reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g2)
            if pointwise:
                gpad = dcols.reshape(padded)
            else:
                gpad = _col2im(dcols, padded, ks, stride, out_sp)
            if any(padding):
                gpad = gpad[(slice(None), slice(None)) + tuple(slice(p, p + s) for p, s in zip(padding, x.shape[2:]))]
            gx = np.ascontiguousarray(gpad)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, f"conv{n}d")


def _col2im(dcols, padded, ks, stride, out_sp):
    B, C = padded[:2]
    dcols = dcols.reshape((B, C) + tuple(ks) + tuple(out_sp))
    gpad = np.zeros(padded, dtype=dcols.dtype)
    for offs in itertools.product(*(range(k) for k in ks)):
        dst = tuple(slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(offs, stride, out_sp))
        gpad[(slice(None), slice(None)) + dst] += dcols[(slice(None), slice(None)) + offs]
    return gpad


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), backward, "softmax")


def instance_norm(a: Tensor, axes=(-2, -1), eps: float = 1e-5) -> Tensor:
    """Zero mean, unit variance over ``axes`` (no affine part)."""
    axes = tuple(ax % a.ndim for ax in axes)
    n = math.prod(a.shape[ax] for ax in axes)
    centered = a.data - a.data.mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=axes, keepdims=True) + eps)
    out = centered * inv

    def backward(g):
        gm = g.sum(axis=axes, keepdims=True) / n
        gx = (g * out).sum(axis=axes, keepdims=True) / n
        return (inv * (g - gm - out * gx),)

    return make_result(out.astype(a.dtype, copy=False), (a,), backward, "instance_norm")


def pad(a: Tensor, widths, mode: str = "zero") -> Tensor:
    """Pad with zeros (``mode="zero"``) or by repeating edge values (``"edge"``).

    ``widths`` is one ``(before, after)`` pair per axis.
    """
    widths = [tuple(int(v) for v in w) for w in widths]
    if len(widths) != a.ndim:
        raise ValueError(f"need {a.ndim} pad pairs, got {len(widths)}")
    if mode not in ("zero", "edge"):
        raise ValueError(f"unknown pad mode {mode!r}")
    out = np.pad(a.data, widths, mode="constant" if mode == "zero" else "edge")

    def backward(g):
        for axis, (lo, hi) in enumerate(widths):
            if not (lo or hi):
                continue
            n = g.shape[axis] - lo - hi
            core = np.take(g, np.arange(lo, lo + n), axis=axis)
            if mode == "edge":
                core = core.copy()
                first = [slice(None)] * g.ndim
                last = [slice(None)] * g.ndim
                first[axis] = slice(0, 1)
                last[axis] = slice(n - 1, n)
                if lo:
                    core[tuple(first)] += np.take(g, np.arange(0, lo), axis=axis).sum(axis=axis, keepdims=True)
                if hi:
                    core[tuple(last)] += np.take(g, np.arange(lo + n, lo + n + hi), axis=axis).sum(axis=axis, keepdims=True)
            g = core
        return (g,)

    return make_result(out, (a,), backward, f"pad_{mode}")


def unfold(a: Tensor, kernel=(3, 3, 3)) -> Tensor:
    """Replicate-padded patch extraction over the last three axes.

    ``[B, C, T, H, W] -> [B, C, kt*kh*kw, T, H, W]``; neighbor ``(dt, dy, dx)``
    lands in channel ``(dt * kh + dy) * kw + dx``, so the center is the middle channel.
    """
    if a.ndim != 5:
        raise ShapeError(f"unfold expects [B, C, T, H, W], got {a.shape}")
    kt, kh, kw = kernel
    if any(k % 2 == 0 for k in kernel):
        raise ValueError(f"unfold kernel must be odd, got {kernel}")
    B, C, T, H, W = a.shape
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    xp = np.pad(a.data, [(0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)], mode="edge")
    win = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))  # B C T H W kt kh kw
    out = np.ascontiguousarray(win.transpose(0, 1, 5, 6, 7, 2, 3, 4)).reshape(B, C, kt * kh * kw, T, H, W)

    def backward(g):
        g = g.reshape(B, C, kt, kh, kw, T, H, W)
        gp = np.zeros(xp.shape, dtype=g.dtype)
        for dt, dy, dx in itertools.product(range(kt), range(kh), range(kw)):
            gp[:, :, dt:dt + T, dy:dy + H, dx:dx + W] += g[:, :, dt, dy, dx]
        # fold the replicated border back onto the edge cells
        for axis, p in ((2, pt), (3, ph), (4, pw)):
            if not p:
                continue
            n = gp.shape[axis] - 2 * p
            core = np.take(gp, np.arange(p, p + n), axis=axis)
            head = np.take(gp, np.arange(0, p), axis=axis).sum(axis=axis, keepdims=True)
            tail = np.take(gp, np.arange(p + n, 2 * p + n), axis=axis).sum(axis=axis, keepdims=True)
            idx = [slice(None)] * 5
            idx[axis] = slice(0, 1)
            core[tuple(idx)] += head
            idx[axis] = slice(n - 1, n)
            core[tuple(idx)] += tail
            gp = core
        return (gp,)

    return make_result(out, (a,), backward, "unfold")


def unfold3d(a: Tensor) -> Tensor:
    """3x3x3 replicate-padded unfold: ``[B,C,T,H,W] -> [B,C,27,T,H,W]``."""
    return unfold(a, (3, 3, 3))


def linear_interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """``[n_out, n_in]`` matrix for 1-D linear resampling with aligned corners."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - i0
    m[np.arange(n_out), i0] = 1.0 - frac
    m[np.arange(n_out), i0 + 1] += frac
    return m


def resize_bilinear(a: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Separable bilinear resize of the last two axes (aligned corners)."""
    H, W = a.shape[-2:]
    ah = Tensor(linear_interp_matrix(H, out_hw[0], a.dtype))
    aw = Tensor(linear_interp_matrix(W, out_hw[1], a.dtype).T.copy())
    return (ah @ a) @ aw
