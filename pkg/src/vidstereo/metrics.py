"""Accuracy and temporal-consistency metrics, and scale-shift alignment."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .data.types import DisparityVideo

DEFAULT_THRESHOLDS = (1.0, 3.0)


def _values(x) -> np.ndarray:
    return np.asarray(x.values if isinstance(x, DisparityVideo) else x, dtype=np.float64)


def _check(pred, gt: DisparityVideo) -> np.ndarray:
    p = _values(pred)
    if p.shape != gt.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {gt.shape} differ in shape")
    return p


def epe(pred, gt: DisparityVideo) -> float:
    """Mean absolute disparity error over valid ground-truth pixels."""
    p = _check(pred, gt)
    if not gt.valid.any():
        raise ValueError("no valid ground-truth pixels")
    return float(np.abs(p - gt.values)[gt.valid].mean())


def epe_per_frame(pred, gt: DisparityVideo) -> list[float]:
    p = _check(pred, gt)
    err = np.abs(p - gt.values)
    return [float(err[t][gt.valid[t]].mean()) if gt.valid[t].any() else float("nan") for t in range(gt.shape[0])]


def temporal_errors(pred, gt: DisparityVideo) -> np.ndarray:
    """``|(p[t+1] - p[t]) - (g[t+1] - g[t])|`` at fixed pixels valid in both frames (flattened)."""
    p = _check(pred, gt)
    if gt.shape[0] < 2:
        raise ValueError("temporal metrics need at least two frames")
    both = gt.valid[1:] & gt.valid[:-1]
    if not both.any():
        raise ValueError("no pixel is valid in two consecutive frames")
    dp = np.diff(p, axis=0)
    dg = np.diff(np.where(gt.valid, gt.values, 0.0), axis=0)
    return np.abs(dp - dg)[both]


def tepe(pred, gt: DisparityVideo) -> float:
    return float(temporal_errors(pred, gt).mean())


def delta_t(pred, gt: DisparityVideo, n: float) -> float:
    """Fraction of counted pixel transitions whose temporal error exceeds ``n`` px."""
    return float((temporal_errors(pred, gt) > n).mean())


def align_scale_shift(rel, ref: DisparityVideo) -> tuple[np.ndarray, float, float]:
    """Least-squares ``(s, b)`` minimizing ``sum_valid (s*rel + b - ref)^2``; returns ``(s*rel + b, s, b)``."""
    r = np.asarray(rel, dtype=np.float64)
    if r.shape != ref.shape:
        raise ValueError(f"relative map {r.shape} and reference {ref.shape} differ in shape")
    x = r[ref.valid]
    y = ref.values[ref.valid].astype(np.float64)
    if x.size < 2:
        raise ValueError("alignment needs at least two valid pixels")
    n = x.size
    sx, sy = x.sum(), y.sum()
    sxx, sxy = x @ x, x @ y
    det = n * sxx - sx * sx
    if det <= 1e-12 * max(1.0, n * sxx) or np.ptp(x) == 0:
        raise ValueError("relative values are constant over valid pixels; scale is undefined")
    s = (n * sxy - sx * sy) / det
    b = (sy - s * sx) / n
    return s * r + b, float(s), float(b)


@dataclass
class EvalReport:
    epe: float
    tepe: float
    delta_t: dict[float, float]
    per_frame_epe: list[float] = field(default_factory=list)
    valid_pixels: int = 0
    counted_transitions: int = 0

    def rows(self) -> list[tuple[str, float]]:
        out = [("epe", self.epe), ("tepe", self.tepe)]
        out += [(f"delta_{n:g}px", v) for n, v in sorted(self.delta_t.items())]
        out += [(f"epe_frame_{t}", v) for t, v in enumerate(self.per_frame_epe)]
        out += [("valid_pixels", self.valid_pixels), ("counted_transitions", self.counted_transitions)]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for name, value in self.rows():
            w.writerow([name, repr(value) if isinstance(value, float) else value])
        return buf.getvalue()

    def to_table(self) -> str:
        rows = self.rows()
        width = max(len(n) for n, _ in rows)
        lines = [f"{'metric':<{width}}  value", "-" * (width + 12)]
        for name, value in rows:
            lines.append(f"{name:<{width}}  {value:.4f}" if isinstance(value, float) else f"{name:<{width}}  {value}")
        return "\n".join(lines) + "\n"


def evaluate(pred, gt: DisparityVideo, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    errs = temporal_errors(pred, gt)
    return EvalReport(
        epe=epe(pred, gt),
        tepe=float(errs.mean()),
        delta_t={float(n): float((errs > n).mean()) for n in thresholds},
        per_frame_epe=epe_per_frame(pred, gt),
        valid_pixels=int(gt.valid.sum()),
        counted_transitions=int(errs.size),
    )
