"""Right-feature warping and matching cost volumes.

Convention: left pixel ``(x, y)`` matches right pixel ``(x - d, y)`` with
``d >= 0``. Inner products are scaled by ``1/sqrt(C)`` so cost magnitudes do
not depend on the channel count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import ShapeError, Tensor, make_result


@dataclass(frozen=True)
class SearchWindow:
    rx: int
    ry: int

    def __post_init__(self):
        if self.rx < 0 or self.ry < 0:
            raise ValueError(f"search radii must be non-negative, got ({self.rx}, {self.ry})")

    @property
    def size(self) -> int:
        return (2 * self.rx + 1) * (2 * self.ry + 1)

    def channels(self, mode: str) -> int:
        if mode == "local":
            return self.size
        if mode == "all_pairs":
            return self.size**2
        raise ValueError(f"unknown correlation mode {mode!r}")

    def center(self) -> int:
        return self.ry * (2 * self.rx + 1) + self.rx


HORIZONTAL = SearchWindow(4, 0)
SQUARE = SearchWindow(1, 1)


@dataclass
class CostVolume:
    values: Tensor  # [B, K, T, H, W]
    mode: str
    window: SearchWindow

    def __post_init__(self):
        k = self.window.channels(self.mode)
        if self.values.shape[1] != k:
            raise ShapeError(f"{self.mode} volume for window {self.window} needs {k} channels, got {self.values.shape[1]}")


def corr_schedule(iter_index: int) -> SearchWindow:
    """Odd iterations search horizontally (4, 0), even ones a 3x3 square (1, 1)."""
    if iter_index < 1:
        raise ValueError(f"iteration indices start at 1, got {iter_index}")
    return HORIZONTAL if iter_index % 2 == 1 else SQUARE


def _check_pair(a: Tensor, b: Tensor) -> None:
    if a.ndim != 5 or a.shape != b.shape:
        raise ShapeError(f"feature maps must both be [B, C, T, H, W] of equal shape, got {a.shape} and {b.shape}")


def _contiguous(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x)


def warp_right(f_right: Tensor, disparity: Tensor) -> tuple[Tensor, np.ndarray]:
    """Bilinearly sample ``f_right`` at ``(x - d, y)``.

    ``disparity`` is ``[B, 1, T, H, W]`` in feature-grid pixels. Returns the
    warped features and a ``[B, T, H, W]`` in-bounds mask; out-of-bounds
    samples are zero.
    """
    B, C, T, H, W = f_right.shape
    if disparity.shape != (B, 1, T, H, W):
        raise ShapeError(f"disparity {disparity.shape} does not match features {f_right.shape}")
    f = _contiguous(f_right.data)
    d = _contiguous(disparity.data.reshape(B, T, H, W).astype(f.dtype, copy=False))
    out, inb = kernels.warp_fwd(f, d)

    def backward(g):
        df, dd = kernels.warp_bwd(f, d, _contiguous(g.astype(f.dtype, copy=False)))
        return df, dd.reshape(disparity.shape).astype(disparity.dtype, copy=False)

    return make_result(np.asarray(out), (f_right, disparity), backward, "warp_right"), np.asarray(inb, dtype=bool)


def _volume(f_left: Tensor, f_right: Tensor, window: SearchWindow, fwd, bwd, op: str) -> Tensor:
    _check_pair(f_left, f_right)
    scale = 1.0 / math.sqrt(f_left.shape[1])
    fl = _contiguous(f_left.data)
    fr = _contiguous(f_right.data.astype(fl.dtype, copy=False))
    out = np.asarray(fwd(fl, fr, window.rx, window.ry)) * fl.dtype.type(scale)

    def backward(g):
        gs = _contiguous((g * scale).astype(fl.dtype, copy=False))
        dl, dr = bwd(fl, fr, gs, window.rx, window.ry)
        return np.asarray(dl), np.asarray(dr)

    return make_result(out, (f_left, f_right), backward, op)


def corr_local(f_left: Tensor, f_right_hat: Tensor, window: SearchWindow) -> CostVolume:
    """``C[i](x) = <F_L(x), F_R(x + o_i)> / sqrt(C)`` for every offset ``o_i`` in the window."""
    v = _volume(f_left, f_right_hat, window, kernels.corr_local_fwd, kernels.corr_local_bwd, "corr_local")
    return CostVolume(v, "local", window)


def corr_all_pairs(f_left: Tensor, f_right_hat: Tensor, window: SearchWindow) -> CostVolume:
    """``C[i*M + j](x) = <F_L(x + o_i), F_R(x + o_j)> / sqrt(C)`` over both windows."""
    v = _volume(f_left, f_right_hat, window, kernels.corr_pairs_fwd, kernels.corr_pairs_bwd, "corr_all_pairs")
    return CostVolume(v, "all_pairs", window)


def correlate(f_left: Tensor, f_right_hat: Tensor, window: SearchWindow, mode: str) -> CostVolume:
    if mode == "all_pairs":
        return corr_all_pairs(f_left, f_right_hat, window)
    if mode == "local":
        return corr_local(f_left, f_right_hat, window)
    raise ValueError(f"unknown correlation mode {mode!r}")
