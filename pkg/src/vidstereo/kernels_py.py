"""Pure-numpy hot kernels: correlation volumes and horizontal bilinear warping.

These are the reference/fallback versions of the routines in ``_ckernels.pyx``.
All arrays are C-contiguous, channel-first ``[B, C, T, H, W]`` feature maps and
``[B, T, H, W]`` disparity fields. Correlations are *unscaled* inner products;
callers apply any normalization.

Offset indexing inside a window of radii ``(rx, ry)``::

    i = (oy + ry) * (2 * rx + 1) + (ox + rx)

and an all-pairs channel is ``k = i_left * M + i_right`` with ``M`` the window size.
"""

from __future__ import annotations

import numpy as np


def window_offsets(rx: int, ry: int) -> list[tuple[int, int]]:
    """(ox, oy) pairs in channel order."""
    return [(ox, oy) for oy in range(-ry, ry + 1) for ox in range(-rx, rx + 1)]


def _span(n: int, *offsets: int) -> tuple[int, int]:
    # positions p where p + o lies in [0, n) for every offset o
    lo = max([0] + [-o for o in offsets])
    hi = min([n] + [n - o for o in offsets])
    return lo, max(lo, hi)


def corr_local_fwd(fl: np.ndarray, fr: np.ndarray, rx: int, ry: int) -> np.ndarray:
    B, C, T, H, W = fl.shape
    offs = window_offsets(rx, ry)
    out = np.zeros((B, len(offs), T, H, W), dtype=fl.dtype)
    for i, (ox, oy) in enumerate(offs):
        y0, y1 = _span(H, oy)
        x0, x1 = _span(W, ox)
        if y1 <= y0 or x1 <= x0:
            continue
        a = fl[:, :, :, y0:y1, x0:x1]
        b = fr[:, :, :, y0 + oy:y1 + oy, x0 + ox:x1 + ox]
        out[:, i, :, y0:y1, x0:x1] = np.einsum("bcthw,bcthw->bthw", a, b)
    return out


def corr_local_bwd(fl, fr, g, rx: int, ry: int):
    B, C, T, H, W = fl.shape
    dfl = np.zeros_like(fl)
    dfr = np.zeros_like(fr)
    for i, (ox, oy) in enumerate(window_offsets(rx, ry)):
        y0, y1 = _span(H, oy)
        x0, x1 = _span(W, ox)
        if y1 <= y0 or x1 <= x0:
            continue
        gi = g[:, i:i + 1, :, y0:y1, x0:x1]
        dfl[:, :, :, y0:y1, x0:x1] += gi * fr[:, :, :, y0 + oy:y1 + oy, x0 + ox:x1 + ox]
        dfr[:, :, :, y0 + oy:y1 + oy, x0 + ox:x1 + ox] += gi * fl[:, :, :, y0:y1, x0:x1]
    return dfl, dfr


def _pair_table(rx: int, ry: int):
    """For each all-pairs channel: (o1, o2, index of o2 - o1 in the doubled window)."""
    offs = window_offsets(rx, ry)
    wide = 4 * rx + 1
    table = []
    for o1 in offs:
        for o2 in offs:
            dx, dy = o2[0] - o1[0], o2[1] - o1[1]
            table.append((o1, o2, (dy + 2 * ry) * wide + (dx + 2 * rx)))
    return table


def corr_pairs_fwd(fl, fr, rx: int, ry: int) -> np.ndarray:
    # C(x)[o1, o2] = <FL(x+o1), FR(x+o2)> = G_{o2-o1}(x+o1), with G the local
    # correlation over the doubled window; only the relative offset needs a dot product.
    B, C, T, H, W = fl.shape
    G = corr_local_fwd(fl, fr, 2 * rx, 2 * ry)
    table = _pair_table(rx, ry)
    out = np.zeros((B, len(table), T, H, W), dtype=fl.dtype)
    for k, ((ax, ay), (bx, by), j) in enumerate(table):
        y0, y1 = _span(H, ay, by)
        x0, x1 = _span(W, ax, bx)
        if y1 > y0 and x1 > x0:
            out[:, k, :, y0:y1, x0:x1] = G[:, j, :, y0 + ay:y1 + ay, x0 + ax:x1 + ax]
    return out


def corr_pairs_bwd(fl, fr, g, rx: int, ry: int):
    B, C, T, H, W = fl.shape
    table = _pair_table(rx, ry)
    dG = np.zeros((B, (4 * rx + 1) * (4 * ry + 1), T, H, W), dtype=fl.dtype)
    for k, ((ax, ay), (bx, by), j) in enumerate(table):
        y0, y1 = _span(H, ay, by)
        x0, x1 = _span(W, ax, bx)
        if y1 > y0 and x1 > x0:
            dG[:, j, :, y0 + ay:y1 + ay, x0 + ax:x1 + ax] += g[:, k, :, y0:y1, x0:x1]
    return corr_local_bwd(fl, fr, dG, 2 * rx, 2 * ry)


def _warp_coords(d: np.ndarray, W: int):
    xs = np.arange(W, dtype=d.dtype) - d
    inb = (xs >= 0) & (xs <= W - 1)
    x0 = np.clip(np.floor(xs), 0, W - 1).astype(np.intp)
    a = np.where(inb, xs - x0, 0).astype(d.dtype)
    x1 = np.minimum(x0 + 1, W - 1)
    return inb, x0, x1, a


def warp_fwd(f: np.ndarray, d: np.ndarray):
    """Sample ``f`` at ``(x - d, y)``; returns (warped, in_bounds)."""
    W = f.shape[-1]
    inb, x0, x1, a = _warp_coords(d, W)
    f0 = np.take_along_axis(f, np.broadcast_to(x0[:, None], f.shape), axis=-1)
    f1 = np.take_along_axis(f, np.broadcast_to(x1[:, None], f.shape), axis=-1)
    a = a[:, None]
    out = ((1 - a) * f0 + a * f1) * inb[:, None]
    return out.astype(f.dtype, copy=False), inb


def warp_bwd(f: np.ndarray, d: np.ndarray, g: np.ndarray):
    B, C, T, H, W = f.shape
    inb, x0, x1, a = _warp_coords(d, W)
    g = g * inb[:, None]
    f0 = np.take_along_axis(f, np.broadcast_to(x0[:, None], f.shape), axis=-1)
    f1 = np.take_along_axis(f, np.broadcast_to(x1[:, None], f.shape), axis=-1)
    dd = -(g * (f1 - f0)).sum(axis=1)

    rows = np.arange(B * C * T * H).reshape(B, C, T, H, 1) * W
    idx0 = (rows + x0[:, None]).ravel()
    idx1 = (rows + x1[:, None]).ravel()
    w0 = (g * (1 - a[:, None])).ravel()
    w1 = (g * a[:, None]).ravel()
    n = f.size
    df = np.bincount(idx0, weights=w0, minlength=n) + np.bincount(idx1, weights=w1, minlength=n)
    return df.reshape(f.shape).astype(f.dtype, copy=False), dd.astype(d.dtype, copy=False)
