from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DisparityVideo:
    """``T x H x W`` left-aligned disparities (pixels) with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 3:
            raise ValueError(f"disparity video must be T x H x W, got {self.values.shape}")
        if self.valid.shape != self.values.shape:
            raise ValueError(f"valid mask {self.valid.shape} does not match values {self.values.shape}")
        bad = self.valid & ~(np.isfinite(self.values) & (self.values >= 0))
        if bad.any():
            raise ValueError(f"{int(bad.sum())} valid pixels have negative or non-finite disparity")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @classmethod
    def dense(cls, values) -> "DisparityVideo":
        values = np.asarray(values)
        return cls(values, np.ones(values.shape, dtype=bool))


@dataclass
class StereoSequence:
    """Rectified left/right frames, ``T x H x W x 3`` in [0, 1]."""

    left: np.ndarray
    right: np.ndarray
    focal_px: float = 1.0
    baseline_m: float = 1.0
    gt: DisparityVideo | None = None

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise ValueError(f"left {self.left.shape} and right {self.right.shape} frames differ in shape")
        if self.left.ndim != 4 or self.left.shape[-1] != 3:
            raise ValueError(f"frames must be T x H x W x 3, got {self.left.shape}")
        if self.gt is not None and self.gt.shape != self.left.shape[:3]:
            raise ValueError(f"ground truth {self.gt.shape} does not match frames {self.left.shape[:3]}")

    @property
    def num_frames(self) -> int:
        return self.left.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.left.shape[1], self.left.shape[2]

    def crop(self, y0: int, x0: int, h: int, w: int) -> "StereoSequence":
        sl = (slice(None), slice(y0, y0 + h), slice(x0, x0 + w))
        gt = None if self.gt is None else DisparityVideo(self.gt.values[sl], self.gt.valid[sl])
        return StereoSequence(self.left[sl], self.right[sl], self.focal_px, self.baseline_m, gt)

    def frames(self, start: int, stop: int) -> "StereoSequence":
        gt = None if self.gt is None else DisparityVideo(self.gt.values[start:stop], self.gt.valid[start:stop])
        return StereoSequence(self.left[start:stop], self.right[start:stop], self.focal_px, self.baseline_m, gt)
