"""Layered synthetic stereo video with exact ground-truth disparity.

A scene is a textured background plane plus fronto-parallel rectangles, each
with its own depth trajectory ``Z(t)`` and horizontal motion. Both views are
rendered from the layered model with a per-pixel depth buffer; the right
camera sits ``baseline_m`` to the right, so a surface at depth ``Z`` appears
shifted left by ``d = focal_px * baseline_m / Z`` pixels.

Left pixel ``(x, y)`` of a surface with disparity ``d`` matches right pixel
``(x - d, y)``. It is marked invalid when that right position is outside the
frame or covered by a nearer surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .. import kvfile
from .types import DisparityVideo, StereoSequence


@dataclass
class Layer:
    x: float  # left-view left edge at t=0, px
    y: int  # top row
    width: int
    height: int
    depth: tuple[float, ...] = (2.0,)  # one value, (start, end), or one per frame
    velocity: float = 0.0  # px/frame, left-view
    sigma: float = 1.5  # texture smoothing, px
    contrast: float = 1.0


@dataclass
class SceneSpec:
    frames: int = 5
    height: int = 64
    width: int = 128
    focal_px: float = 100.0
    baseline_m: float = 0.1
    seed: int = 0
    background_depth: tuple[float, ...] = (5.0,)
    background_velocity: float = 0.0
    background_sigma: float = 1.5
    background_contrast: float = 1.0
    layers: list[Layer] = field(default_factory=list)  # near to far
    subpixel: bool = False


def trajectory(values, frames: int) -> np.ndarray:
    """Expand 1 (constant), 2 (linear start/end) or ``frames`` values to length ``frames``."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 1:
        return np.full(frames, v[0])
    if v.size == frames:
        return v.copy()
    if v.size == 2:
        return np.linspace(v[0], v[1], frames)
    raise ValueError(f"trajectory needs 1, 2 or {frames} values, got {v.size}")


def _texture(rng: np.random.Generator, h: int, w: int, sigma: float, contrast: float) -> np.ndarray:
    noise = rng.uniform(size=(h, w, 3))
    smooth = gaussian_filter(noise, sigma=(sigma, sigma, 0), mode="wrap")
    lo = smooth.min(axis=(0, 1), keepdims=True)
    hi = smooth.max(axis=(0, 1), keepdims=True)
    tex = (smooth - lo) / np.maximum(hi - lo, 1e-12)
    return np.clip(0.5 + contrast * (tex - 0.5), 0.0, 1.0)


def _sample(tex: np.ndarray, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # linear interpolation along u; exact texel copies at integer u
    i0 = np.floor(u).astype(np.int64)
    a = (u - i0)[..., None]
    i1 = np.minimum(i0 + 1, tex.shape[1] - 1)
    return (1.0 - a) * tex[rows, i0] + a * tex[rows, i1]


@dataclass
class _Surface:
    tex: np.ndarray
    x: np.ndarray  # left edge per frame (u origin)
    y0: int
    y1: int
    width: float  # math.inf for the background
    depth: np.ndarray
    u_offset: int = 0


def _validate(spec: SceneSpec, depths: list[np.ndarray], bg_depth: np.ndarray) -> None:
    if spec.frames < 1 or spec.height < 1 or spec.width < 1:
        raise ValueError(f"invalid scene size {spec.frames}x{spec.height}x{spec.width}")
    if not (spec.focal_px > 0 and spec.baseline_m > 0):
        raise ValueError("focal_px and baseline_m must be positive")
    if np.any(bg_depth <= 0):
        raise ValueError("background depth must be strictly positive")
    for i, (layer, z) in enumerate(zip(spec.layers, depths)):
        if np.any(z <= 0):
            raise ValueError(f"layer {i} has zero or negative depth")
        if layer.width < 1 or layer.height < 1:
            raise ValueError(f"layer {i} has empty extent")
        if np.any(z >= bg_depth):
            raise ValueError(f"layer {i} is not in front of the background")
        if i and np.any(z < depths[i - 1]):
            t = int(np.argmax(z < depths[i - 1]))
            raise ValueError(f"layers {i - 1} and {i} violate near-to-far ordering at frame {t}")
    if not spec.subpixel:
        fb = spec.focal_px * spec.baseline_m
        for name, z, xs in [("background", bg_depth, spec.background_velocity * np.arange(spec.frames))] + [
            (f"layer {i}", z, l.x + l.velocity * np.arange(spec.frames)) for i, (l, z) in enumerate(zip(spec.layers, depths))
        ]:
            d = fb / z
            if np.any(np.abs(d - np.round(d)) > 1e-6) or np.any(np.abs(xs - np.round(xs)) > 1e-9):
                raise ValueError(f"{name}: integer rendering needs integer disparities and positions (set subpixel)")


def generate_scene(spec: SceneSpec) -> StereoSequence:
    T, H, W = spec.frames, spec.height, spec.width
    fb = spec.focal_px * spec.baseline_m
    bg_depth = trajectory(spec.background_depth, T)
    depths = [trajectory(l.depth, T) for l in spec.layers]
    _validate(spec, depths, bg_depth)
    rng = np.random.default_rng(spec.seed)

    surfaces: list[_Surface] = []
    for layer, z in zip(spec.layers, depths):
        tex = _texture(rng, layer.height, layer.width + 1, layer.sigma, layer.contrast)
        xs = layer.x + layer.velocity * np.arange(T)
        surfaces.append(_Surface(tex, xs, layer.y, layer.y + layer.height, float(layer.width), z))
    bg_x = spec.background_velocity * np.arange(T)
    bg_disp = fb / bg_depth
    u_min = float(np.min(-bg_x))
    u_max = float(np.max(W - 1 + bg_disp - bg_x))
    off = -math.floor(u_min)
    bg_tex = _texture(rng, H, math.ceil(u_max) + off + 2, spec.background_sigma, spec.background_contrast)
    surfaces.append(_Surface(bg_tex, bg_x, 0, H, math.inf, bg_depth, off))

    if spec.subpixel:
        shifts = [fb / s.depth for s in surfaces]
    else:
        shifts = [np.round(fb / s.depth) for s in surfaces]

    rows = np.arange(H)[:, None].repeat(W, axis=1)
    cols = np.arange(W, dtype=np.float64)[None, :].repeat(H, axis=0)
    left = np.empty((T, H, W, 3))
    right = np.empty((T, H, W, 3))
    disp = np.empty((T, H, W))
    valid = np.empty((T, H, W), dtype=bool)

    for t in range(T):
        ids_l = _zbuffer(surfaces, shifts, t, rows, cols, view_shift=False)
        ids_r = _zbuffer(surfaces, shifts, t, rows, cols, view_shift=True)
        left[t] = _shade(surfaces, ids_l, t, rows, cols, [np.zeros(T)] * len(surfaces))
        right[t] = _shade(surfaces, ids_r, t, rows, cols, shifts)
        d_true = np.array([fb / s.depth[t] for s in surfaces])
        d_render = np.array([sh[t] for sh in shifts])
        disp[t] = d_true[ids_l]
        target = cols - d_render[ids_l]
        ok = target >= 0
        # the matched right position must not be covered by a nearer surface
        for j, s in enumerate(surfaces[:-1]):
            nearer = ids_l > j
            cover = _covers(s, t, rows, target, d_render[j])
            ok &= ~(nearer & cover)
        valid[t] = ok

    return StereoSequence(left, right, spec.focal_px, spec.baseline_m, DisparityVideo(disp, valid))


def _covers(s: _Surface, t: int, rows: np.ndarray, x: np.ndarray, shift: float) -> np.ndarray:
    lo = s.x[t] - shift
    return (rows >= s.y0) & (rows < s.y1) & (x >= lo) & (x < lo + s.width)


def _zbuffer(surfaces, shifts, t, rows, cols, view_shift: bool) -> np.ndarray:
    zbuf = np.full(rows.shape, np.inf)
    ids = np.full(rows.shape, len(surfaces) - 1)
    for j, s in enumerate(surfaces):
        shift = shifts[j][t] if view_shift else 0.0
        hit = _covers(s, t, rows, cols, shift) & (s.depth[t] < zbuf)
        zbuf[hit] = s.depth[t]
        ids[hit] = j
    return ids


def _shade(surfaces, ids, t, rows, cols, shifts) -> np.ndarray:
    out = np.empty(rows.shape + (3,))
    for j, s in enumerate(surfaces):
        m = ids == j
        if not m.any():
            continue
        u = cols[m] + shifts[j][t] - s.x[t] + s.u_offset
        out[m] = _sample(s.tex, rows[m] - s.y0, u)
    return out


def random_scene_spec(seed: int, frames: int = 5, height: int = 64, width: int = 128,
                      disparity_range: tuple[float, float] = (1.0, 16.0), max_layers: int = 3,
                      subpixel: bool = True, focal_px: float = 100.0, baseline_m: float = 0.1) -> SceneSpec:
    """Random layered scene whose disparities stay inside ``disparity_range``.

    Layers get disjoint disparity bands so their depth order never changes.
    """
    rng = np.random.default_rng(seed)
    fb = focal_px * baseline_m
    d_lo, d_hi = disparity_range
    q = (lambda v: float(v)) if subpixel else (lambda v: float(np.round(v)))

    n = int(rng.integers(1, max_layers + 1))
    bg_span = min(3.0, (d_hi - d_lo) / (n + 1))
    bg0 = q(rng.uniform(d_lo, d_lo + bg_span))
    bg1 = q(np.clip(bg0 + rng.uniform(-0.3, 0.3), d_lo, d_lo + bg_span))
    top_bg = max(bg0, bg1)
    bands = np.linspace(top_bg + 1.0, d_hi, n + 1)

    layers = []
    for i in range(n):
        lo, hi = bands[i], bands[i + 1]
        d0 = q(rng.uniform(lo, hi))
        d1 = q(np.clip(d0 + rng.uniform(-1.0, 1.0), lo, hi))
        w = int(rng.integers(width // 8, width // 2))
        h = int(rng.integers(height // 5, height // 2))
        layers.append(Layer(
            x=q(rng.uniform(-w / 3, width - 2 * w / 3)),
            y=int(rng.integers(0, height - h)),
            width=w,
            height=h,
            depth=tuple(fb / q(d) for d in np.linspace(d0, d1, frames)),
            velocity=q(rng.uniform(-2.0, 2.0)),
            sigma=float(rng.uniform(0.8, 2.0)),
            contrast=float(rng.uniform(0.6, 1.0)),
        ))
    layers.sort(key=lambda l: l.depth[0])  # nearest first
    # disparity moves linearly in time; depth is given per frame
    return SceneSpec(
        frames=frames, height=height, width=width, focal_px=focal_px, baseline_m=baseline_m,
        seed=int(rng.integers(0, 2**31)),
        background_depth=tuple(fb / q(d) for d in np.linspace(bg0, bg1, frames)),
        background_velocity=q(rng.uniform(-1.0, 1.0)),
        background_sigma=float(rng.uniform(0.8, 2.0)),
        layers=layers,
        subpixel=subpixel,
    )


class SyntheticDataset:
    """Indexable, deterministic collection of random scene specs."""

    def __init__(self, seed: int, length: int = 100_000, **spec_kwargs):
        self.seed = seed
        self.length = length
        self.spec_kwargs = spec_kwargs

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, index: int) -> SceneSpec:
        if not 0 <= index < self.length:
            raise IndexError(index)
        sub = int(np.random.SeedSequence([self.seed, index]).generate_state(1)[0])
        return random_scene_spec(sub, **self.spec_kwargs)


# scene files: a [scene] section, optional [background], one [layer] per layer

_SCENE_KEYS = {"frames": int, "height": int, "width": int, "focal_px": float, "baseline_m": float,
               "seed": int, "subpixel": kvfile.to_bool}
_LAYER_KEYS = {"x": float, "y": int, "width": int, "height": int, "depth": kvfile.to_floats,
               "velocity": float, "sigma": float, "contrast": float}
_BACKGROUND_KEYS = {"depth": kvfile.to_floats, "velocity": float, "sigma": float, "contrast": float}


def _convert(entries: dict[str, str], table: dict, section: str) -> dict:
    out = {}
    for key, raw in entries.items():
        if key not in table:
            raise ValueError(f"unknown key {key!r} in [{section}]")
        try:
            out[key] = table[key](raw)
        except ValueError as exc:
            raise ValueError(f"[{section}] {key}: {exc}") from exc
    return out


def parse_scene(text: str) -> SceneSpec:
    spec = SceneSpec()
    for section, entries in kvfile.parse(text):
        if section in ("", "scene"):
            for key, value in _convert(entries, _SCENE_KEYS, "scene").items():
                setattr(spec, key, value)
        elif section == "background":
            for key, value in _convert(entries, _BACKGROUND_KEYS, section).items():
                setattr(spec, f"background_{key}", value)
        elif section == "layer":
            values = _convert(entries, _LAYER_KEYS, section)
            missing = {"x", "y", "width", "height"} - set(values)
            if missing:
                raise ValueError(f"[layer] missing keys {sorted(missing)}")
            spec.layers.append(Layer(**values))
        else:
            raise ValueError(f"unknown section [{section}]")
    return spec


def dump_scene(spec: SceneSpec) -> str:
    blocks = [("scene", {k: getattr(spec, k) for k in _SCENE_KEYS}),
              ("background", {k: getattr(spec, f"background_{k}") for k in _BACKGROUND_KEYS})]
    for layer in spec.layers:
        blocks.append(("layer", {k: getattr(layer, k) for k in _LAYER_KEYS}))
    return kvfile.dump(blocks)
