"""Cost encoding, the recurrent 3D-GRU update, and disparity upsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    concat,
    matmul,
    relu,
    reshape,
    resize_bilinear,
    sigmoid,
    softmax,
    tanh,
    transpose,
    tsum,
    unfold,
)
from .correlation import CostVolume, SearchWindow
from .nn import Conv, Module, Parameter, SepConv3d, conv2d_video, pointwise

ATTENTION_MODES = ("none", "temporal", "temporal+spatial")
UPSAMPLE_MODES = ("temporal_convex", "convex", "bilinear")


# ---------------------------------------------------------------------------
# cost encoding
# ---------------------------------------------------------------------------


class CostEncoder(Module):
    """Per-pixel two-layer MLP over the cost channels: ``K -> 2L -> L``."""

    def __init__(self, k: int, out: int, *, rng, dtype=np.float32):
        self.k = k
        self.fc1 = pointwise(k, 2 * out, rng=rng, dtype=dtype)
        self.fc2 = pointwise(2 * out, out, rng=rng, dtype=dtype)

    def __call__(self, values: Tensor) -> Tensor:
        if values.shape[1] != self.k:
            raise ShapeError(f"cost encoder expects {self.k} channels, volume has {values.shape[1]}")
        return self.fc2(relu(self.fc1(values)))


def encode_cost(volume: CostVolume, encoder: CostEncoder) -> Tensor:
    return encoder(volume.values)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


class _SelfAttention(Module):
    """Single-head scaled dot-product attention over the second-to-last axis, with residual.

    The output projection starts at zero so a fresh block is the identity.
    """

    def __init__(self, channels: int, *, rng, dtype=np.float32):
        bound = 1.0 / math.sqrt(channels)
        self.wq = Parameter(rng.uniform(-bound, bound, (channels, channels)).astype(dtype))
        self.wk = Parameter(rng.uniform(-bound, bound, (channels, channels)).astype(dtype))
        self.wv = Parameter(rng.uniform(-bound, bound, (channels, channels)).astype(dtype))
        self.wo = Parameter(np.zeros((channels, channels), dtype=dtype))
        self.scale = 1.0 / math.sqrt(channels)

    def __call__(self, tokens: Tensor) -> Tensor:
        shape = tokens.shape
        C = shape[-1]
        flat = reshape(tokens, (-1, C))
        q = reshape(matmul(flat, self.wq), shape)
        k = reshape(matmul(flat, self.wk), shape)
        v = reshape(matmul(flat, self.wv), shape)
        axes = tuple(range(len(shape) - 2)) + (len(shape) - 1, len(shape) - 2)
        weights = softmax(matmul(q, transpose(k, axes)) * self.scale, axis=-1)
        mixed = reshape(matmul(weights, v), (-1, C))
        return tokens + reshape(matmul(mixed, self.wo), shape)


class Attention(Module):
    """Temporal attention over T per pixel, then optionally spatial attention over H*W per frame."""

    def __init__(self, channels: int, mode: str = "temporal+spatial", *, rng, dtype=np.float32):
        if mode not in ATTENTION_MODES:
            raise ValueError(f"attention mode must be one of {ATTENTION_MODES}, got {mode!r}")
        self.mode = mode
        self.temporal = _SelfAttention(channels, rng=rng, dtype=dtype) if mode != "none" else None
        self.spatial = _SelfAttention(channels, rng=rng, dtype=dtype) if mode == "temporal+spatial" else None

    def __call__(self, x: Tensor) -> Tensor:
        return attention(x, self.mode, self)


def attention(x: Tensor, mode: str, params: Attention) -> Tensor:
    if mode not in ATTENTION_MODES:
        raise ValueError(f"attention mode must be one of {ATTENTION_MODES}, got {mode!r}")
    if mode == "none":
        return x
    B, C, T, H, W = x.shape
    tokens = transpose(x, (0, 3, 4, 2, 1))  # B H W T C
    x = transpose(params.temporal(tokens), (0, 4, 3, 1, 2))
    if mode == "temporal+spatial":
        tokens = reshape(transpose(x, (0, 2, 3, 4, 1)), (B, T, H * W, C))
        x = transpose(reshape(params.spatial(tokens), (B, T, H, W, C)), (0, 4, 1, 2, 3))
    return x


class SuperKernel(Module):
    """Residual large-kernel separable convolution, ``(1, 7, 1)`` then ``(1, 1, 7)``."""

    def __init__(self, channels: int, *, rng, dtype=np.float32):
        self.vertical = Conv(channels, channels, (1, 7, 1), rng=rng, dtype=dtype)
        self.horizontal = Conv(channels, channels, (1, 1, 7), rng=rng, dtype=dtype, init="zero")

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.horizontal(relu(self.vertical(x)))


# ---------------------------------------------------------------------------
# GRU update
# ---------------------------------------------------------------------------


@dataclass
class GruState:
    h: Tensor  # [B, C_h, T, H, W]
    d: Tensor  # [B, 1, T, H, W], feature-grid pixels
    iter_index: int = 1


class UpdateBlock(Module):
    """Parameters of one recurrent refinement step.

    ``cost_encoders`` holds one MLP per search window, since the two windows'
    volumes index different offset sets.
    """

    def __init__(self, *, windows: list[SearchWindow], corr_mode: str, context_channels: int,
                 cost_channels: int = 32, hidden: int = 64, attention: str = "temporal+spatial",
                 super_kernel: bool = False, rng, dtype=np.float32):
        self.hidden = hidden
        self.cost_encoders = {
            window_key(w): CostEncoder(w.channels(corr_mode), cost_channels, rng=rng, dtype=dtype) for w in windows
        }
        self.conv_cost = conv2d_video(cost_channels, 32, 3, rng=rng, dtype=dtype)
        self.conv_disp = conv2d_video(1, 15, 3, rng=rng, dtype=dtype)
        cx = 32 + 15 + 1 + context_channels
        self.input_channels = cx
        self.attention = Attention(cx, attention, rng=rng, dtype=dtype)
        self.super_kernel = SuperKernel(cx, rng=rng, dtype=dtype) if super_kernel else None
        self.gates = SepConv3d(hidden + cx, 2 * hidden, rng=rng, dtype=dtype)
        self.candidate = SepConv3d(hidden + cx, hidden, rng=rng, dtype=dtype)
        self.head = conv2d_video(hidden, 32, 3, rng=rng, dtype=dtype)
        self.head_out = Conv(32, 1, (3, 3, 3), rng=rng, dtype=dtype, init="zero")


def window_key(w: SearchWindow) -> str:
    return f"{w.rx}x{w.ry}"


def gru_step(state: GruState, e_n: Tensor, f_ctx: Tensor, params: UpdateBlock,
             detach_disparity: bool = True) -> GruState:
    """One refinement step.

    Inputs ``x = [conv(E), conv(d), d, F_c]`` pass through attention (and the
    optional super kernel); gates ``z, r`` and candidate ``q`` come from
    separable 3-D convolutions; ``h' = (1 - z) h + z q`` and ``d' = d + head(h')``.
    With ``detach_disparity`` the disparity feeding the inputs is a constant,
    but the residual path ``d -> d'`` stays differentiable.
    """
    if state.iter_index < 1:
        raise ValueError(f"iteration index must be >= 1, got {state.iter_index}")
    h, d = state.h, state.d
    d_in = d.detach() if detach_disparity else d
    x = concat([relu(params.conv_cost(e_n)), relu(params.conv_disp(d_in)), d_in, f_ctx], axis=1)
    x = attention(x, params.attention.mode, params.attention)
    if params.super_kernel is not None:
        x = params.super_kernel(x)

    C = params.hidden
    gates = sigmoid(params.gates(concat([h, x], axis=1)))
    z = gates[:, :C]
    r = gates[:, C:]
    q = tanh(params.candidate(concat([r * h, x], axis=1)))
    h_new = (1.0 - z) * h + z * q
    delta = params.head_out(relu(params.head(h_new)))
    d_new = d + delta
    if not (np.isfinite(h_new.data).all() and np.isfinite(d_new.data).all()):
        raise FloatingPointError(f"non-finite values in GRU step {state.iter_index}")
    return GruState(h_new, d_new, state.iter_index + 1)


# ---------------------------------------------------------------------------
# upsampling
# ---------------------------------------------------------------------------


def temporal_convex_upsample(d: Tensor, w_logits: Tensor, alpha: int, max_size: int | None = None) -> Tensor:
    """Each fine pixel is a softmax-weighted mix of its 27 coarse space-time neighbors.

    ``d`` is ``[B, 1, T, H, W]``; ``w_logits`` is ``[B, 27*alpha^2, T, H, W]``
    laid out as ``(neighbor, sub_y, sub_x)``. Values are scaled by ``alpha``
    (disparity grows with resolution), so the output is ``[B, 1, T, aH, aW]``.
    """
    return _convex(d, w_logits, alpha, (3, 3, 3), max_size)


def convex_upsample_2d(d: Tensor, w_logits: Tensor, alpha: int, max_size: int | None = None) -> Tensor:
    """Per-frame convex upsampling over the 3x3 spatial neighborhood (9 weights per subpixel)."""
    return _convex(d, w_logits, alpha, (1, 3, 3), max_size)


def _convex(d: Tensor, w_logits: Tensor, alpha: int, kernel, max_size) -> Tensor:
    alpha = int(alpha)
    if alpha < 1:
        raise ValueError(f"upsampling rate must be >= 1, got {alpha}")
    B, one, T, H, W = d.shape
    if one != 1:
        raise ShapeError(f"disparity must have one channel, got {d.shape}")
    if max_size is not None and max(alpha * H, alpha * W) > max_size:
        raise ValueError(f"upsampled size {alpha * H}x{alpha * W} exceeds limit {max_size}")
    n = math.prod(kernel)
    if w_logits.shape != (B, n * alpha * alpha, T, H, W):
        raise ShapeError(f"weights must be {(B, n * alpha * alpha, T, H, W)}, got {w_logits.shape}")
    w = softmax(reshape(w_logits, (B, n, alpha, alpha, T, H, W)), axis=1)
    neighbors = reshape(unfold(d * float(alpha), kernel), (B, n, 1, 1, T, H, W))
    up = tsum(w * neighbors, axis=1)  # B a a T H W
    up = transpose(up, (0, 3, 4, 1, 5, 2))  # B T H a W a
    return reshape(up, (B, 1, T, alpha * H, alpha * W))


def bilinear_upsample(d: Tensor, alpha: int) -> Tensor:
    """Per-frame bilinear resize (aligned corners) by ``alpha``, values scaled by ``alpha``."""
    alpha = int(alpha)
    if alpha == 1:
        return d
    H, W = d.shape[-2:]
    return resize_bilinear(d, (alpha * H, alpha * W)) * float(alpha)


class UpsampleHead(Module):
    """Predicts convex-combination logits from the hidden state."""

    def __init__(self, hidden: int, mode: str, alpha: int, *, rng, dtype=np.float32):
        if mode not in UPSAMPLE_MODES:
            raise ValueError(f"upsample mode must be one of {UPSAMPLE_MODES}, got {mode!r}")
        self.mode = mode
        self.alpha = alpha
        if mode == "bilinear":
            return
        n = 27 if mode == "temporal_convex" else 9
        self.conv = conv2d_video(hidden, 64, 3, rng=rng, dtype=dtype)
        self.out = pointwise(64, n * alpha * alpha, rng=rng, dtype=dtype, init="default")

    def __call__(self, d: Tensor, h: Tensor) -> Tensor:
        if self.mode == "bilinear":
            return bilinear_upsample(d, self.alpha)
        logits = self.out(relu(self.conv(h))) * 0.25
        if self.mode == "temporal_convex":
            return temporal_convex_upsample(d, logits, self.alpha)
        return convex_upsample_2d(d, logits, self.alpha)
