"""Back-project a disparity map to a colored ASCII PLY point cloud."""

from __future__ import annotations

import io

import numpy as np


def export_pointcloud(frame: np.ndarray, disparity: np.ndarray, valid: np.ndarray, focal_px: float,
                      baseline_m: float, cx: float | None = None, cy: float | None = None) -> bytes:
    """Points ``Z = f*B/d``, ``X = (x-cx) Z/f``, ``Y = (y-cy) Z/f`` for every valid pixel.

    ``frame`` is ``H x W x 3`` in [0, 1]; the principal point defaults to the image center.
    """
    disparity = np.asarray(disparity, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    H, W = disparity.shape
    if valid.shape != (H, W) or frame.shape[:2] != (H, W):
        raise ValueError(f"frame {frame.shape}, disparity {disparity.shape} and mask {valid.shape} disagree")
    if focal_px <= 0 or baseline_m <= 0:
        raise ValueError("metric export needs positive focal_px and baseline_m")
    if np.any(disparity[valid] <= 0):
        raise ValueError("zero or negative disparity at a valid pixel")
    cx = (W - 1) / 2.0 if cx is None else cx
    cy = (H - 1) / 2.0 if cy is None else cy

    ys, xs = np.nonzero(valid)
    d = disparity[ys, xs]
    z = focal_px * baseline_m / d
    x = (xs - cx) * z / focal_px
    y = (ys - cy) * z / focal_px
    rgb = np.clip(np.round(frame[ys, xs] * 255.0), 0, 255).astype(np.int64)

    out = io.StringIO()
    out.write("ply\nformat ascii 1.0\n")
    out.write(f"element vertex {len(d)}\n")
    out.write("property float x\nproperty float y\nproperty float z\n")
    out.write("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
    for i in range(len(d)):
        out.write(f"{x[i]:.6g} {y[i]:.6g} {z[i]:.6g} {rgb[i, 0]} {rgb[i, 1]} {rgb[i, 2]}\n")
    return out.getvalue().encode("ascii")
