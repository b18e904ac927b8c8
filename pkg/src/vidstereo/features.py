"""Matching and context features, optionally concatenated with frozen prior maps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ShapeError, Tensor, concat, instance_norm, linear_interp_matrix, relu
from .data.pfm import load_pfm
from .data.types import StereoSequence
from .nn import Module, ResidualBlock, conv2d_video, pointwise

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
SUPPORTED_SCALES = (4, 8, 16, 32)


@dataclass
class FeatureMaps:
    f_left: Tensor  # [B, C_f, T, H/scale, W/scale]
    f_right: Tensor
    f_ctx: Tensor
    scale: int

    def __post_init__(self):
        if self.f_left.shape != self.f_right.shape:
            raise ShapeError(f"left {self.f_left.shape} and right {self.f_right.shape} features differ")

    @property
    def channels(self) -> int:
        return self.f_left.shape[1]


@dataclass
class PriorProvider:
    """Source of frozen per-frame prior feature maps.

    ``kind="file"`` reads ``<root>/<view>/<frame:06d>_<group>.pfm`` where each
    PFM holds a group of 1 or 3 channels; ``<root>/manifest.json`` gives
    ``{"channels": C}``. Groups are concatenated in index order.
    """

    kind: str = "none"
    root: str | None = None
    channels: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("none", "file"):
            raise ValueError(f"prior kind must be 'none' or 'file', got {self.kind!r}")
        if self.kind == "none":
            self.channels = 0
        elif self.root is None:
            raise ValueError("a file prior needs a root directory")
        else:
            manifest = Path(self.root) / "manifest.json"
            if manifest.exists():
                declared = int(json.loads(manifest.read_text())["channels"])
                if self.channels and self.channels != declared:
                    raise ValueError(f"prior configured with {self.channels} channels, manifest says {declared}")
                self.channels = declared
            if self.channels <= 0:
                raise ValueError("file prior needs a positive channel count (manifest.json or config)")


def resize_map(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear (aligned corners) resize of the last two axes, outside any graph."""
    H, W = arr.shape[-2:]
    if (H, W) == tuple(out_hw):
        return arr
    ah = linear_interp_matrix(H, out_hw[0], arr.dtype)
    aw = linear_interp_matrix(W, out_hw[1], arr.dtype)
    return ah @ arr @ aw.T


def load_prior_features(provider: PriorProvider, t: int, size: tuple[int, int], view: str = "left") -> np.ndarray:
    """Prior maps of frame ``t`` as ``[1, C_prior, H', W']`` (plain array, never differentiated)."""
    if provider.kind == "none":
        return np.zeros((1, 0) + tuple(size))
    folder = Path(provider.root) / view
    groups = sorted(folder.glob(f"{t:06d}_*.pfm"), key=lambda p: int(p.stem.split("_")[-1]))
    if not groups:
        raise FileNotFoundError(f"no prior maps for frame {t} under {folder}")
    maps = []
    for path in groups:
        key = str(path)
        if key not in provider._cache:
            provider._cache[key] = load_pfm(path)
        a = provider._cache[key].astype(np.float64)
        maps.append(a[None] if a.ndim == 2 else a.transpose(2, 0, 1))
    stacked = np.concatenate(maps, axis=0)
    if stacked.shape[0] != provider.channels:
        raise ValueError(f"frame {t}: prior has {stacked.shape[0]} channels, expected {provider.channels}")
    return resize_map(stacked, size)[None]


def prior_video(provider: PriorProvider, frames: int, size: tuple[int, int], view: str, dtype) -> Tensor:
    maps = [load_prior_features(provider, t, size, view)[0] for t in range(frames)]
    return Tensor(np.stack(maps, axis=1)[None].astype(dtype))  # [1, C, T, H', W']


class Encoder(Module):
    """Strided residual encoder with 1x1 projections at each requested tap.

    Stem: 7x7 stride 2. Every convolution is followed by per-frame instance
    normalization, which keeps activations on a fixed scale while training.
    Each further level is two residual blocks, the first
    with stride 2, so levels land at 1/4, 1/8, 1/16 and 1/32.
    """

    def __init__(self, out_channels: int, scales=(4, 8, 16), widths=(24, 32, 48, 64, 64), *, rng, dtype=np.float32):
        scales = tuple(sorted(scales))
        bad = [s for s in scales if s not in SUPPORTED_SCALES]
        if bad:
            raise ValueError(f"unsupported feature scales {bad}; choose from {SUPPORTED_SCALES}")
        self.scales = scales
        self.stem = conv2d_video(3, widths[0], 7, 2, rng=rng, dtype=dtype)
        n_levels = SUPPORTED_SCALES.index(scales[-1]) + 1
        self.levels = []
        for i in range(n_levels):
            cin, cout = widths[i], widths[i + 1]
            self.levels.append([ResidualBlock(cin, cout, 2, rng=rng, dtype=dtype),
                                ResidualBlock(cout, cout, 1, rng=rng, dtype=dtype)])
        self.heads = {str(s): pointwise(widths[SUPPORTED_SCALES.index(s) + 1], out_channels, rng=rng, dtype=dtype,
                                        init="default") for s in scales}

    def __call__(self, x: Tensor) -> dict[int, Tensor]:
        x = relu(instance_norm(self.stem(x)))
        out = {}
        for scale, blocks in zip(SUPPORTED_SCALES, self.levels):
            for block in blocks:
                x = block(x)
            if scale in self.scales:
                out[scale] = self.heads[str(scale)](x)
        return out


class PriorAdapter(Module):
    """Shallow two-layer convolution over resized prior maps."""

    def __init__(self, channels: int, *, rng, dtype=np.float32):
        self.conv1 = conv2d_video(channels, channels, 3, rng=rng, dtype=dtype)
        self.conv2 = conv2d_video(channels, channels, 3, rng=rng, dtype=dtype, init="default")

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(relu(self.conv1(x)))


class FeatureNet(Module):
    """Shared matching encoder for both views, a left-only context encoder, and the prior adapter."""

    def __init__(self, cnn_channels: int = 16, prior_channels: int = 0, scales=(4, 8, 16), *, rng, dtype=np.float32):
        self.cnn_channels = cnn_channels
        self.prior_channels = prior_channels
        self.matching = Encoder(cnn_channels, scales, rng=rng, dtype=dtype)
        self.context = Encoder(cnn_channels, scales, rng=rng, dtype=dtype)
        self.adapter = PriorAdapter(prior_channels, rng=rng, dtype=dtype) if prior_channels else None

    @property
    def out_channels(self) -> int:
        return self.cnn_channels + self.prior_channels


def normalize_frames(frames: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    """``[B, T, H, W, 3]`` in [0, 1] -> normalized ``[B, 3, T, H, W]``."""
    x = (frames - np.asarray(mean)) / np.asarray(std)
    return np.ascontiguousarray(x.transpose(0, 4, 1, 2, 3))


def extract_pyramid(left: np.ndarray, right: np.ndarray, params: FeatureNet, prior: PriorProvider,
                    scales, dtype=np.float32) -> dict[int, FeatureMaps]:
    """Features at every requested scale from ``[B, T, H, W, 3]`` frame batches."""
    B, T, H, W, _ = left.shape
    for s in scales:
        if H % s or W % s:
            raise ValueError(f"frame size {H}x{W} is not divisible by scale {s}; pad first")
    if (prior.kind != "none") != bool(params.prior_channels) or prior.channels != params.prior_channels:
        raise ValueError(f"prior provides {prior.channels} channels, model expects {params.prior_channels}")
    both = np.concatenate([normalize_frames(left), normalize_frames(right)], axis=0).astype(dtype)
    matched = params.matching(Tensor(both))
    context = params.context(Tensor(normalize_frames(left).astype(dtype)))

    out = {}
    for s in scales:
        fl, fr = matched[s][:B], matched[s][B:]
        fc = context[s]
        if params.adapter is not None:
            size = (H // s, W // s)
            pl, pr = (prior_video(prior, T, size, view, dtype) for view in ("left", "right"))
            if B > 1:
                pl, pr = (Tensor(np.repeat(p.data, B, axis=0)) for p in (pl, pr))
            al, ar = params.adapter(pl), params.adapter(pr)
            fl, fr, fc = concat([fl, al], 1), concat([fr, ar], 1), concat([fc, al], 1)
        out[s] = FeatureMaps(fl, fr, fc, s)
    return out


def extract(seq: StereoSequence, params: FeatureNet, prior: PriorProvider, scale: int, dtype=np.float32) -> FeatureMaps:
    return extract_pyramid(seq.left[None], seq.right[None], params, prior, (scale,), dtype)[scale]
