"""Command-line entry point: ``vidstereo generate|train|infer|eval|ablate``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics
from .config import RunConfig, load_config, override, worker_count
from .data import (
    SyntheticDataset,
    export_pointcloud,
    generate_scene,
    load_sequence,
    parse_scene,
    random_scene_spec,
    save_sequence,
)
from .data.pfm import load_pfm, save_pfm
from .data.sequence_io import numbered_files
from .data.synthetic import dump_scene
from .data.types import DisparityVideo, StereoSequence
from .features import PriorProvider
from .pipeline import StereoModel, load_checkpoint, predict, save_checkpoint, train, write_loss_csv

ABLATIONS = {
    "correlation": [("all_pairs", {"correlation": "all_pairs"}), ("local", {"correlation": "local"})],
    "upsampling": [("bilinear", {"upsample": "bilinear"}), ("convex", {"upsample": "convex"}),
                   ("temporal_convex", {"upsample": "temporal_convex"})],
    "attention": [("none", {"attention": "none"}), ("temporal", {"attention": "temporal"}),
                  ("temporal+spatial", {"attention": "temporal+spatial"})],
    "stages": [("16-8-4", {"stages": (16, 8, 4)}), ("32-16-8-4", {"stages": (32, 16, 8, 4)})],
}


class CLIError(Exception):
    pass


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = override(cfg, "run", seed=args.seed, out=args.out)
    if args.seed is not None:
        cfg = override(cfg, "model", seed=args.seed)
        cfg = override(cfg, "train", seed=args.seed)
    stages = tuple(int(s) for s in args.stages.split(",")) if getattr(args, "stages", None) else None
    iters = getattr(args, "iters", None)
    cfg = override(cfg, "model", stages=stages, attention=getattr(args, "attention", None),
                   upsample=getattr(args, "upsample", None), correlation=getattr(args, "correlation", None))
    if args.command in ("train", "ablate"):
        cfg = override(cfg, "model", iters=iters)
        cfg = override(cfg, "train", steps=getattr(args, "steps", None), lr=getattr(args, "lr", None),
                       iters=iters, frames=getattr(args, "frames", None))
        if getattr(args, "frames", None):
            cfg = override(cfg, "data", frames=max(args.frames, cfg.data.frames))
    elif args.command == "generate":
        cfg = override(cfg, "data", frames=getattr(args, "frames", None))
    else:
        cfg = override(cfg, "eval", iters=iters, frames=getattr(args, "frames", None))
    prior = getattr(args, "prior", None)
    if prior is not None:
        cfg = override(cfg, "prior", kind="none", root="") if prior == "none" else override(cfg, "prior", kind="file", root=prior)
    return cfg


def make_prior(cfg: RunConfig) -> PriorProvider:
    p = cfg.prior
    return PriorProvider(p.kind, p.root or None, p.channels)


def heldout_scenes(cfg: RunConfig) -> list[StereoSequence]:
    ds = SyntheticDataset(cfg.data.heldout_seed, cfg.data.heldout_scenes, **cfg.data.spec_kwargs())
    return [generate_scene(ds[i]) for i in range(len(ds))]


def evaluate_model(model: StereoModel, scenes: list[StereoSequence], iters: int, thresholds) -> dict:
    def one(seq):
        return metrics.evaluate(predict(seq, model, iters), seq.gt, thresholds)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        reports = list(pool.map(one, scenes))
    out = {"epe": float(np.mean([r.epe for r in reports])), "tepe": float(np.mean([r.tepe for r in reports]))}
    for n in thresholds:
        out[f"delta_{n:g}px"] = float(np.mean([r.delta_t[float(n)] for r in reports]))
    return out


def model_config_with_prior(cfg: RunConfig):
    prior = make_prior(cfg)
    return dataclasses.replace(cfg.model, prior_channels=prior.channels), prior


def run_training(cfg: RunConfig, out_dir: Path, verbose: bool = True) -> tuple[StereoModel, list]:
    mcfg, prior = model_config_with_prior(cfg)
    if prior.kind != "none":
        raise CLIError("training on synthetic scenes does not support file priors (no prior maps exist for them)")
    model = StereoModel(mcfg)
    dataset = SyntheticDataset(cfg.data.seed, **cfg.data.spec_kwargs())
    tcfg = dataclasses.replace(cfg.train, iters=mcfg.iters)
    scenes = heldout_scenes(cfg) if cfg.run.log_every > 0 and verbose else []
    window: list[float] = []

    def report(step, m, rec):
        window.append(rec.loss)
        if verbose and cfg.run.log_every > 0 and (step + 1) % cfg.run.log_every == 0:
            ev = evaluate_model(m, scenes, mcfg.iters, cfg.eval.thresholds)
            print(f"step {step + 1:>6}  loss {np.mean(window):.4f}  lr {rec.lr:.2e}  "
                  f"held-out epe {ev['epe']:.3f}  tepe {ev['tepe']:.3f}", flush=True)
            window.clear()

    out_dir.mkdir(parents=True, exist_ok=True)
    if tcfg.steps == 0:
        save_checkpoint(model, out_dir / "checkpoint.npz")
        write_loss_csv([], out_dir / "loss.csv")
        return model, []
    curve = train(dataset, model, tcfg, out_dir=out_dir, callback=report)
    return model, curve


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> None:
    cfg = resolve_config(args)
    out = Path(cfg.run.out)
    if args.spec:
        specs = [parse_scene(Path(args.spec).read_text())]
    else:
        kw = cfg.data.spec_kwargs()
        specs = [random_scene_spec(cfg.run.seed * 100_003 + i, **kw) for i in range(args.count)]
    for i, spec in enumerate(specs):
        target = out if len(specs) == 1 else out / f"seq_{i:03d}"
        try:
            save_sequence(generate_scene(spec), target)
        except OSError as exc:
            raise CLIError(f"cannot write to {target}: {exc}") from exc
        (target / "scene.txt").write_text(dump_scene(spec))
    cfg.write_snapshot(out)
    print(f"wrote {len(specs)} sequence(s) to {out}")


def cmd_train(args) -> None:
    cfg = resolve_config(args)
    out = Path(cfg.run.out)
    cfg.write_snapshot(out)
    _, curve = run_training(cfg, out)
    final = f"final loss {curve[-1].loss:.4f}" if curve else "no steps run"
    print(f"checkpoint: {out / 'checkpoint.npz'}  ({final})")


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield start, min(n, start + size)


def cmd_infer(args) -> None:
    cfg = resolve_config(args)
    out = Path(cfg.run.out)
    model = load_checkpoint(args.checkpoint)
    seq = load_sequence(args.input)
    if args.export_ply:
        manifest = Path(args.input) / "manifest.json"
        calib = json.loads(manifest.read_text()) if manifest.exists() else {}
        if "focal_px" not in calib or "baseline_m" not in calib:
            raise CLIError(f"--export-ply needs focal_px and baseline_m in {manifest}")
    prior = make_prior(cfg)
    frames = []
    for start, stop in _chunks(seq.num_frames, cfg.eval.frames):
        frames.append(predict(seq.frames(start, stop), model, cfg.eval.iters, prior).values)
    disp = np.concatenate(frames, axis=0)
    (out / "disp").mkdir(parents=True, exist_ok=True)
    for t in range(disp.shape[0]):
        save_pfm(out / "disp" / f"{t:06d}.pfm", disp[t])
    if args.export_ply:
        (out / "ply").mkdir(exist_ok=True)
        for t in range(disp.shape[0]):
            valid = disp[t] > 1e-6
            ply = export_pointcloud(seq.left[t], disp[t], valid, seq.focal_px, seq.baseline_m)
            (out / "ply" / f"{t:06d}.ply").write_bytes(ply)
    cfg.write_snapshot(out)
    print(f"wrote {disp.shape[0]} disparity maps to {out / 'disp'}")


def _read_disparity_dir(path: Path) -> np.ndarray:
    folder = path / "disp" if (path / "disp").is_dir() else path
    files = numbered_files(folder, (".pfm",))
    if not files:
        raise CLIError(f"no PFM files in {folder}")
    return np.stack([load_pfm(p) for p in files]).astype(np.float64)


def cmd_eval(args) -> None:
    cfg = resolve_config(args)
    out = Path(cfg.run.out)
    pred = _read_disparity_dir(Path(args.pred))
    gt_raw = _read_disparity_dir(Path(args.gt))
    if pred.shape[0] != gt_raw.shape[0]:
        raise CLIError(f"{pred.shape[0]} predicted frames but {gt_raw.shape[0]} ground-truth frames")
    valid = np.isfinite(gt_raw)
    gt = DisparityVideo(np.where(valid, gt_raw, 0.0), valid)
    report = metrics.evaluate(pred, gt, cfg.eval.thresholds)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.txt").write_text(report.to_table())
    cfg.write_snapshot(out)
    print(report.to_table(), end="")


def cmd_ablate(args) -> None:
    cfg = resolve_config(args)
    out = Path(cfg.run.out)
    cfg.write_snapshot(out)
    scenes = heldout_scenes(cfg)
    rows = []
    for name, changes in ABLATIONS[args.axis]:
        variant = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, **changes))
        model, _ = run_training(variant, out / name.replace("+", "_"), verbose=False)
        ev = evaluate_model(model, scenes, variant.model.iters, variant.eval.thresholds)
        rows.append((name, ev))
        print(f"{args.axis}={name}: epe {ev['epe']:.4f}  tepe {ev['tepe']:.4f}  delta_1px {ev.get('delta_1px', float('nan')):.4f}",
              flush=True)
    path = out / f"ablation_{args.axis}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "tepe", "delta_1px", "epe"])
        for name, ev in rows:
            w.writerow([name, repr(ev["tepe"]), repr(ev.get("delta_1px", float("nan"))), repr(ev["epe"])])
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors as one line, like every other failure."""

    def error(self, message):
        self.exit(2, f"error: {message} (see {self.prog} --help)\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vidstereo", description="Temporally consistent video stereo at toy scale.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, model_flags=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        if model_flags:
            p.add_argument("--stages", help="comma-separated scales, e.g. 16,8,4")
            p.add_argument("--attention", choices=["none", "temporal", "temporal+spatial"])
            p.add_argument("--upsample", choices=["temporal_convex", "convex", "bilinear"])
            p.add_argument("--correlation", choices=["all_pairs", "local"])
            p.add_argument("--prior", help="'none' or a prior-map directory")

    p = sub.add_parser("generate", help="render a synthetic stereo sequence to disk")
    common(p, model_flags=False)
    p.add_argument("--spec", help="scene file; a random scene is drawn from --seed when omitted")
    p.add_argument("--count", type=int, default=1, help="number of random sequences")
    p.add_argument("--frames", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train on synthetic scenes")
    common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--frames", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict disparity for a sequence directory")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="sequence directory (left/, right/)")
    p.add_argument("--iters", type=int)
    p.add_argument("--frames", type=int, help="chunk length")
    p.add_argument("--export-ply", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predicted disparities against ground truth")
    common(p, model_flags=False)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare variants along one axis")
    common(p)
    p.add_argument("--axis", required=True, choices=sorted(ABLATIONS))
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--frames", type=int)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # single-line diagnostic for every failure
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
