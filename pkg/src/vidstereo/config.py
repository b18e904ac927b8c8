"""Run configuration: ``key = value`` files with one section per concern.

Sections: ``[run]``, ``[model]``, ``[train]``, ``[data]``, ``[eval]``,
``[prior]``. Every key must be a known field; values are parsed by the type
of the field's default.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import kvfile
from .pipeline import ModelConfig, TrainConfig


@dataclass
class RunSection:
    seed: int = 0
    out: str = "runs/default"
    log_every: int = 250


@dataclass
class DataConfig:
    seed: int = 1
    height: int = 64
    width: int = 128
    frames: int = 5
    max_layers: int = 3
    min_disparity: float = 1.0
    max_disparity: float = 16.0
    subpixel: bool = True
    heldout_seed: int = 777
    heldout_scenes: int = 6

    def spec_kwargs(self) -> dict:
        return dict(frames=self.frames, height=self.height, width=self.width,
                    disparity_range=(self.min_disparity, self.max_disparity),
                    max_layers=self.max_layers, subpixel=self.subpixel)


@dataclass
class EvalConfig:
    iters: int = 20
    frames: int = 20  # chunk length for long sequences
    thresholds: tuple[float, ...] = (1.0, 3.0)


@dataclass
class PriorConfig:
    kind: str = "none"
    root: str = ""
    channels: int = 0


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)

    SECTIONS = ("run", "model", "train", "data", "eval", "prior")

    def dump(self) -> str:
        blocks = []
        for name in self.SECTIONS:
            section = getattr(self, name)
            blocks.append((name, {f.name: getattr(section, f.name) for f in dataclasses.fields(section)}))
        return kvfile.dump(blocks)

    def write_snapshot(self, out_dir) -> Path:
        path = Path(out_dir) / "config.resolved.ini"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dump())
        return path


def _parser_for(default):
    if isinstance(default, bool):
        return kvfile.to_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        if default and all(isinstance(v, int) for v in default):
            return kvfile.to_ints
        return kvfile.to_floats
    return str


def _apply(section, values: dict[str, str], name: str):
    known = {f.name: getattr(section, f.name) for f in dataclasses.fields(section)}
    updates = {}
    for key, raw in values.items():
        if key not in known:
            raise KeyError(f"unknown key {key!r} in [{name}]; known keys: {', '.join(sorted(known))}")
        try:
            updates[key] = _parser_for(known[key])(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ValueError(f"[{name}] {key}: {exc}") from None
    return dataclasses.replace(section, **updates)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for name, entries in kvfile.parse(text):
        if name not in RunConfig.SECTIONS:
            raise KeyError(f"unknown config section [{name}]; expected one of {', '.join(RunConfig.SECTIONS)}")
        cfg = dataclasses.replace(cfg, **{name: _apply(getattr(cfg, name), entries, name)})
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def override(cfg: RunConfig, section: str, **values) -> RunConfig:
    """Flag overrides; ``None`` values are ignored."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    return dataclasses.replace(cfg, **{section: _apply(getattr(cfg, section), values, section)})


def worker_count() -> int:
    """Parallelism cap from ``VIDSTEREO_WORKERS`` (default 1)."""
    raw = os.environ.get("VIDSTEREO_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"VIDSTEREO_WORKERS must be an integer, got {raw!r}") from None
    return max(1, n)
