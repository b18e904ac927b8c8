"""Cascaded inference, the sequence loss, training, and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .aggregation import ATTENTION_MODES, UPSAMPLE_MODES, GruState, UpdateBlock, UpsampleHead, encode_cost, gru_step, window_key
from .autodiff import Tensor, no_grad, tabs, tanh, tsum
from .correlation import HORIZONTAL, SQUARE, corr_schedule, correlate, warp_right
from .data.synthetic import SceneSpec, generate_scene
from .data.types import DisparityVideo, StereoSequence
from .features import FeatureNet, PriorProvider, extract_pyramid
from .nn import Module, pointwise
from .optim import AdamW, clip_grad_norm, one_cycle_lr

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CORRELATION_MODES = ("all_pairs", "local")


@dataclass
class ModelConfig:
    cnn_channels: int = 16
    prior_channels: int = 0
    cost_channels: int = 32  # L
    hidden: int = 64  # C_h
    stages: tuple[int, ...] = (8, 4)
    iters: int = 6
    attention: str = "temporal+spatial"
    upsample: str = "temporal_convex"
    correlation: str = "all_pairs"
    super_kernel: bool = False
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        self.stages = tuple(int(s) for s in self.stages)
        CascadeConfig(self.stages, self.iters)  # validates
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"attention must be one of {ATTENTION_MODES}, got {self.attention!r}")
        if self.upsample not in UPSAMPLE_MODES:
            raise ValueError(f"upsample must be one of {UPSAMPLE_MODES}, got {self.upsample!r}")
        if self.correlation not in CORRELATION_MODES:
            raise ValueError(f"correlation must be one of {CORRELATION_MODES}, got {self.correlation!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_json(self) -> str:
        d = asdict(self)
        d["stages"] = list(self.stages)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class CascadeConfig:
    stages: tuple[int, ...] = (16, 8, 4)
    iters: int = 20
    weights: tuple[float, ...] | None = None  # default: 1 per stage, 2 for the finest

    def __post_init__(self):
        self.stages = tuple(int(s) for s in self.stages)
        if not self.stages:
            raise ValueError("cascade needs at least one stage")
        for a, b in zip(self.stages, self.stages[1:]):
            if not (a > b and a % b == 0):
                raise ValueError(f"stages must strictly decrease and each divide the previous: {self.stages}")
        if self.iters < 1:
            raise ValueError(f"need at least one iteration, got {self.iters}")

    @property
    def final_alpha(self) -> int:
        return self.stages[-1]

    def split(self) -> list[int]:
        """Iterations per stage, proportional to ``weights`` by largest remainder; the finest gets >= 1."""
        n = len(self.stages)
        w = np.asarray(self.weights if self.weights is not None else [1.0] * (n - 1) + [2.0], dtype=float)
        if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError(f"bad stage weights {self.weights} for {n} stages")
        exact = self.iters * w / w.sum()
        counts = np.floor(exact).astype(int)
        remainder = self.iters - counts.sum()
        order = sorted(range(n), key=lambda i: (-(exact[i] - counts[i]), -i))
        for i in order[:remainder]:
            counts[i] += 1
        if counts[-1] == 0:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[-1] += 1
        return [int(c) for c in counts]


class StereoModel(Module):
    """All trainable parameters plus the architecture configuration."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        dtype = np.dtype(config.dtype)
        self.features = FeatureNet(config.cnn_channels, config.prior_channels, config.stages, rng=rng, dtype=dtype)
        c_f = self.features.out_channels
        self.update = UpdateBlock(windows=[HORIZONTAL, SQUARE], corr_mode=config.correlation, context_channels=c_f,
                                  cost_channels=config.cost_channels, hidden=config.hidden,
                                  attention=config.attention, super_kernel=config.super_kernel, rng=rng, dtype=dtype)
        self.hidden_init = {str(s): pointwise(c_f, config.hidden, rng=rng, dtype=dtype, init="default")
                            for s in config.stages}
        self.full_res = {str(s): UpsampleHead(config.hidden, config.upsample, s, rng=rng, dtype=dtype)
                         for s in config.stages}
        self.promote = {str(b): UpsampleHead(config.hidden, config.upsample, a // b, rng=rng, dtype=dtype)
                        for a, b in zip(config.stages, config.stages[1:])}

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)


@dataclass
class ForwardResult:
    disparity: np.ndarray  # [B, T, H, W]
    iterates: list[Tensor] = field(default_factory=list)  # full-res [B, 1, T, H, W] per iteration
    stage_iters: list[int] = field(default_factory=list)


def _pad_frames(frames: np.ndarray, multiple: int) -> np.ndarray:
    H, W = frames.shape[2:4]
    ph, pw = (-H) % multiple, (-W) % multiple
    if not (ph or pw):
        return frames
    return np.pad(frames, [(0, 0), (0, 0), (0, ph), (0, pw), (0, 0)], mode="edge")


def forward_frames(left: np.ndarray, right: np.ndarray, model: StereoModel, iters: int | None = None,
                   prior: PriorProvider | None = None, record: bool = True) -> ForwardResult:
    """Run the cascade on ``[B, T, H, W, 3]`` frame batches.

    Frames are edge-padded to a multiple of the coarsest scale; outputs are cropped back.
    """
    cfg = model.config
    cascade = CascadeConfig(cfg.stages, iters if iters is not None else cfg.iters)
    prior = prior or PriorProvider()
    B, T, H, W, _ = left.shape
    coarsest = cascade.stages[0]
    lp, rp = _pad_frames(left, coarsest), _pad_frames(right, coarsest)
    pyramid = extract_pyramid(lp, rp, model.features, prior, cascade.stages, model.dtype)

    iterates: list[Tensor] = []
    split = cascade.split()
    d = None
    state = None
    for si, (scale, n_iters) in enumerate(zip(cascade.stages, split)):
        fm = pyramid[scale]
        Hs, Ws = fm.f_left.shape[3:]
        if d is None:
            d = Tensor(np.zeros((B, 1, T, Hs, Ws), dtype=model.dtype))
        else:
            d = model.promote[str(scale)](state.d, state.h)
        h = tanh(model.hidden_init[str(scale)](fm.f_ctx))
        state = GruState(h, d, 1)
        for n in range(1, n_iters + 1):
            window = corr_schedule(n)
            warped, _ = warp_right(fm.f_right, state.d.detach())
            volume = correlate(fm.f_left, warped, window, cfg.correlation)
            e = encode_cost(volume, model.update.cost_encoders[window_key(window)])
            try:
                state = gru_step(state, e, fm.f_ctx, model.update)
            except FloatingPointError as exc:
                raise FloatingPointError(f"stage 1/{scale}, iteration {n}: {exc}") from None
            if record:
                full = model.full_res[str(scale)](state.d, state.h)
                iterates.append(full[:, :, :, :H, :W])
        if si + 1 < len(cascade.stages):
            continue
        if not iterates or not record:
            full = model.full_res[str(scale)](state.d, state.h)
            final = full[:, :, :, :H, :W]
        else:
            final = iterates[-1]
    out = final.data[:, 0]
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite disparity in the final output")
    return ForwardResult(out, iterates, split)


def forward(seq: StereoSequence, model: StereoModel, iters: int | None = None,
            prior: PriorProvider | None = None, record: bool = True) -> ForwardResult:
    return forward_frames(seq.left[None], seq.right[None], model, iters, prior, record)


def predict(seq: StereoSequence, model: StereoModel, iters: int | None = None,
            prior: PriorProvider | None = None) -> DisparityVideo:
    """Inference without graph recording; returns the final full-resolution disparity."""
    with no_grad():
        res = forward(seq, model, iters, prior, record=False)
    d = np.maximum(res.disparity[0].astype(np.float64), 0.0)
    return DisparityVideo(d, np.ones(d.shape, dtype=bool))


def sequence_loss(gt: np.ndarray, valid: np.ndarray, iterates: list[Tensor], gamma: float = 0.9) -> Tensor:
    """``sum_n gamma^(N-n) sum_t mean_valid |gt - D_n^t|``, averaged over the batch.

    ``gt`` and ``valid`` are ``[B, T, H, W]``. Frames without valid pixels add nothing.
    """
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    if not iterates:
        raise ValueError("no iterates to supervise")
    valid = np.asarray(valid, dtype=bool)
    counts = valid.sum(axis=(2, 3), keepdims=True)
    if counts.sum() == 0:
        raise ValueError("ground truth has no valid pixels")
    dtype = iterates[0].dtype
    weights = np.where(valid, 1.0 / np.maximum(counts, 1), 0.0) / gt.shape[0]
    weights = Tensor(weights[:, None].astype(dtype))
    target = Tensor(np.where(valid, gt, 0.0)[:, None].astype(dtype))
    N = len(iterates)
    total = None
    for n, pred in enumerate(iterates, 1):
        term = tsum(tabs(target - pred) * weights) * float(gamma ** (N - n))
        total = term if total is None else total + term
    return total


def loss(gt: DisparityVideo, iterates: list[Tensor], gamma: float = 0.9) -> Tensor:
    return sequence_loss(gt.values[None], gt.valid[None], iterates, gamma)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: StereoModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    arrays["__config__"] = np.frombuffer(model.config.to_json().encode(), dtype=np.uint8)
    arrays["__version__"] = np.array([CHECKPOINT_VERSION], dtype=np.int64)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)


def load_checkpoint(path, expected: ModelConfig | None = None) -> StereoModel:
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
    except (OSError, ValueError, EOFError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__version__" not in data or "__config__" not in data:
        raise CheckpointError(f"{path} is not a model checkpoint")
    version = int(data["__version__"][0])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}")
    config = ModelConfig.from_dict(json.loads(data["__config__"].tobytes().decode()))
    if expected is not None and expected != config:
        diff = {k: (getattr(config, k), getattr(expected, k)) for k in asdict(config)
                if getattr(config, k) != getattr(expected, k)}
        raise CheckpointError(f"checkpoint config differs from the requested one: {diff}")
    model = StereoModel(config)
    model.load_state_dict({k[len("param/"):]: v for k, v in data.items() if k.startswith("param/")})
    return model


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 3000
    lr: float = 1e-3
    gamma: float = 0.9
    batch: int = 1
    crop: tuple[int, int] = (64, 128)
    frames: int = 5
    iters: int = 6
    seed: int = 0
    weight_decay: float = 1e-5
    clip: float = 1.0
    pct_start: float = 0.05
    checkpoint_every: int = 500

    def __post_init__(self):
        self.crop = tuple(int(c) for c in self.crop)
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.steps < 0 or self.batch < 1 or self.frames < 1 or self.iters < 1:
            raise ValueError("steps must be >= 0 and batch, frames, iters >= 1")
        if self.lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")


@dataclass
class LossRecord:
    step: int
    loss: float
    lr: float


def _random_crop(seq: StereoSequence, crop: tuple[int, int], frames: int, rng: np.random.Generator) -> StereoSequence:
    T, H, W = seq.left.shape[:3]
    ch, cw = min(crop[0], H), min(crop[1], W)
    t0 = int(rng.integers(0, T - frames + 1)) if T > frames else 0
    y0 = int(rng.integers(0, H - ch + 1))
    x0 = int(rng.integers(0, W - cw + 1))
    return seq.frames(t0, t0 + frames).crop(y0, x0, ch, cw)


def make_batch(specs: Iterable[SceneSpec], cfg: TrainConfig, rng: np.random.Generator):
    seqs = [_random_crop(generate_scene(s), cfg.crop, cfg.frames, rng) for s in specs]
    left = np.stack([s.left for s in seqs])
    right = np.stack([s.right for s in seqs])
    gt = np.stack([s.gt.values for s in seqs])
    valid = np.stack([s.gt.valid for s in seqs])
    return left, right, gt, valid


def train(dataset, model: StereoModel, cfg: TrainConfig, out_dir=None,
          callback: Callable[[int, StereoModel, LossRecord], None] | None = None) -> list[LossRecord]:
    """Optimize ``model`` in place on scenes drawn from ``dataset`` (indexable SceneSpecs).

    Returns the per-step loss curve. With ``out_dir``, checkpoints land in
    ``out_dir/checkpoint.npz`` every ``checkpoint_every`` steps and at the end.
    """
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt = out_dir / "checkpoint.npz" if out_dir is not None else None
    order = rng.permutation(len(dataset)) if len(dataset) <= 1_000_000 else None
    curve: list[LossRecord] = []
    last_good = [p.data.copy() for p in params]

    for step in range(cfg.steps):
        idx = [int(order[(step * cfg.batch + i) % len(order)]) if order is not None else
               int(rng.integers(0, len(dataset))) for i in range(cfg.batch)]
        left, right, gt, valid = make_batch([dataset[i] for i in idx], cfg, rng)
        lr = one_cycle_lr(step, cfg.steps, cfg.lr, cfg.pct_start) if cfg.lr > 0 else 0.0

        model.zero_grad()
        result = forward_frames(left, right, model, cfg.iters)
        value = sequence_loss(gt, valid, result.iterates, cfg.gamma)
        if not math.isfinite(value.item()):
            for p, saved in zip(params, last_good):
                p.data = saved
            if ckpt is not None:
                save_checkpoint(model, ckpt)
            raise FloatingPointError(f"non-finite loss at step {step}; restored the last good parameters")
        value.backward()
        clip_grad_norm(params, cfg.clip)
        opt.step(lr)

        rec = LossRecord(step, value.item(), lr)
        curve.append(rec)
        if (step + 1) % max(1, cfg.checkpoint_every) == 0:
            last_good = [p.data.copy() for p in params]
            if ckpt is not None:
                save_checkpoint(model, ckpt)
        if callback is not None:
            callback(step, model, rec)

    if ckpt is not None:
        save_checkpoint(model, ckpt)
        write_loss_csv(curve, out_dir / "loss.csv")
    return curve


def write_loss_csv(curve: list[LossRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "lr"])
        for r in curve:
            w.writerow([r.step, repr(r.loss), repr(r.lr)])
