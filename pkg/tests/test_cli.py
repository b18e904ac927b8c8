import csv
import hashlib

import numpy as np
import pytest

from vidstereo.cli import main
from vidstereo.config import RunConfig, load_config, override, parse_config, worker_count
from vidstereo.data import load_sequence
from vidstereo.data.pfm import load_pfm, save_pfm
from vidstereo.metrics import evaluate
from vidstereo.pipeline import load_checkpoint
from oracles import forward_warp_residual

TINY_CONFIG = """
[run]
log_every = 0

[model]
cnn_channels = 4
cost_channels = 4
hidden = 8
iters = 2
attention = temporal

[train]
crop = 16, 32
frames = 2
steps = 2
lr = 0.001

[data]
height = 16
width = 32
frames = 3
max_layers = 1
max_disparity = 6
heldout_scenes = 1

[eval]
iters = 2
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_CONFIG)
    return str(path)


def digest(folder):
    h = hashlib.sha256()
    for p in sorted(folder.rglob("*")):
        if p.is_file() and p.name != "config.resolved.ini":
            h.update(p.relative_to(folder).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = RunConfig()
        assert parse_config(cfg.dump()) == cfg

    def test_parses_types(self, config):
        cfg = load_config(config)
        assert cfg.train.crop == (16, 32) and cfg.model.hidden == 8 and cfg.train.lr == 0.001
        assert cfg.data.subpixel is True

    @pytest.mark.parametrize("text", ["[model]\nhiden = 3\n", "[optimizer]\nlr = 1\n"])
    def test_unknown_keys_rejected(self, text):
        with pytest.raises(KeyError):
            parse_config(text)

    def test_bad_value(self):
        with pytest.raises(ValueError, match="hidden"):
            parse_config("[model]\nhidden = lots\n")

    def test_override_ignores_none(self):
        cfg = RunConfig()
        assert override(cfg, "train", steps=None) is cfg
        assert override(cfg, "train", steps=5).train.steps == 5

    def test_worker_env(self, monkeypatch):
        monkeypatch.setenv("VIDSTEREO_WORKERS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("VIDSTEREO_WORKERS", "x")
        with pytest.raises(ValueError):
            worker_count()


class TestGenerate:
    def test_counts_and_snapshot(self, tmp_path, config):
        out = tmp_path / "seq"
        assert main(["generate", "--config", config, "--seed", "4", "--out", str(out)]) == 0
        assert len(list((out / "left").glob("*.png"))) == 3
        assert len(list((out / "right").glob("*.png"))) == 3
        assert len(list((out / "disp").glob("*.pfm"))) == 3
        assert (out / "manifest.json").exists() and (out / "config.resolved.ini").exists()
        assert load_config(out / "config.resolved.ini").run.seed == 4

    def test_deterministic(self, tmp_path, config):
        for name in ("a", "b"):
            assert main(["generate", "--config", config, "--seed", "2", "--out", str(tmp_path / name)]) == 0
        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_round_trip_warp_consistent(self, tmp_path):
        spec = tmp_path / "scene.txt"
        spec.write_text("[scene]\nframes = 2\nheight = 16\nwidth = 40\n\n[background]\ndepth = 5\n\n"
                        "[layer]\nx = 10\ny = 3\nwidth = 12\nheight = 8\ndepth = 1.25\nvelocity = 1\n")
        assert main(["generate", "--spec", str(spec), "--out", str(tmp_path / "s")]) == 0
        seq = load_sequence(tmp_path / "s")
        assert seq.num_frames == 2 and seq.gt is not None
        assert forward_warp_residual(seq) == 0.0

    def test_frames_flag(self, tmp_path, config):
        assert main(["generate", "--config", config, "--frames", "4", "--out", str(tmp_path / "f")]) == 0
        assert load_sequence(tmp_path / "f").num_frames == 4

    def test_multiple(self, tmp_path, config):
        assert main(["generate", "--config", config, "--count", "2", "--out", str(tmp_path / "m")]) == 0
        assert (tmp_path / "m" / "seq_001" / "manifest.json").exists()

    def test_unwritable(self, tmp_path, config, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["generate", "--config", config, "--out", str(blocker / "sub")]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error:") and err.count("\n") == 1


class TestTrainInfer:
    def test_zero_steps_writes_initial_checkpoint(self, tmp_path, config):
        out = tmp_path / "r"
        assert main(["train", "--config", config, "--steps", "0", "--out", str(out)]) == 0
        assert (out / "checkpoint.npz").exists()
        assert (out / "loss.csv").read_text().strip() == "step,loss,lr"

    def test_zero_lr_checkpoint_equals_initial(self, tmp_path, config):
        assert main(["train", "--config", config, "--steps", "0", "--out", str(tmp_path / "init")]) == 0
        assert main(["train", "--config", config, "--lr", "0", "--out", str(tmp_path / "lr0")]) == 0
        a = load_checkpoint(tmp_path / "init" / "checkpoint.npz").state_dict()
        b = load_checkpoint(tmp_path / "lr0" / "checkpoint.npz").state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_flag_overrides_and_snapshot(self, tmp_path, config):
        out = tmp_path / "r"
        assert main(["train", "--config", config, "--steps", "1", "--stages", "4", "--upsample", "convex",
                     "--iters", "3", "--out", str(out)]) == 0
        snap = load_config(out / "config.resolved.ini")
        assert snap.model.stages == (4,) and snap.model.upsample == "convex" and snap.model.iters == 3
        assert load_checkpoint(out / "checkpoint.npz").config.stages == (4,)
        rows = list(csv.reader((out / "loss.csv").open()))
        assert rows[0] == ["step", "loss", "lr"] and len(rows) == 2

    def test_file_prior_rejected_for_training(self, tmp_path, config, capsys):
        assert main(["train", "--config", config, "--prior", str(tmp_path), "--out", str(tmp_path / "r")]) == 1
        assert "prior" in capsys.readouterr().err

    def test_infer_deterministic_and_ply(self, tmp_path, config):
        assert main(["generate", "--config", config, "--frames", "5", "--out", str(tmp_path / "seq")]) == 0
        assert main(["train", "--config", config, "--out", str(tmp_path / "run")]) == 0
        ckpt = str(tmp_path / "run" / "checkpoint.npz")
        for name in ("a", "b"):
            assert main(["infer", "--config", config, "--checkpoint", ckpt, "--input", str(tmp_path / "seq"),
                         "--frames", "2", "--export-ply", "--out", str(tmp_path / name)]) == 0
        assert digest(tmp_path / "a") == digest(tmp_path / "b")
        assert len(list((tmp_path / "a" / "disp").glob("*.pfm"))) == 5  # chunks 2 + 2 + 1
        assert len(list((tmp_path / "a" / "ply").glob("*.ply"))) == 5

    @pytest.mark.parametrize("iters", ["1", "20"])
    def test_infer_iteration_counts(self, tmp_path, config, iters):
        assert main(["generate", "--config", config, "--out", str(tmp_path / "seq")]) == 0
        assert main(["train", "--config", config, "--steps", "0", "--out", str(tmp_path / "run")]) == 0
        assert main(["infer", "--checkpoint", str(tmp_path / "run" / "checkpoint.npz"), "--input",
                     str(tmp_path / "seq"), "--iters", iters, "--out", str(tmp_path / "o")]) == 0
        d = load_pfm(tmp_path / "o" / "disp" / "000000.pfm")
        assert d.shape == (16, 32) and np.isfinite(d).all()

    def test_ply_needs_calibration(self, tmp_path, config, capsys):
        assert main(["generate", "--config", config, "--out", str(tmp_path / "seq")]) == 0
        (tmp_path / "seq" / "manifest.json").write_text("{}")
        assert main(["train", "--config", config, "--steps", "0", "--out", str(tmp_path / "run")]) == 0
        code = main(["infer", "--checkpoint", str(tmp_path / "run" / "checkpoint.npz"), "--input",
                     str(tmp_path / "seq"), "--export-ply", "--out", str(tmp_path / "o")])
        assert code == 1 and "focal_px" in capsys.readouterr().err

    def test_missing_checkpoint(self, tmp_path, capsys):
        assert main(["infer", "--checkpoint", str(tmp_path / "none.npz"), "--input", str(tmp_path),
                     "--out", str(tmp_path / "o")]) == 1
        assert capsys.readouterr().err.startswith("error:")


def write_disp(folder, frames):
    folder.mkdir(parents=True)
    for t, f in enumerate(frames):
        save_pfm(folder / f"{t:06d}.pfm", np.asarray(f, np.float32))


class TestEval:
    def test_perfect(self, tmp_path):
        frames = [np.full((3, 4), 2.0), np.full((3, 4), 3.0)]
        write_disp(tmp_path / "gt", frames)
        write_disp(tmp_path / "pred", frames)
        assert main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"), "--out", str(tmp_path / "o")]) == 0
        rows = dict(csv.reader((tmp_path / "o" / "report.csv").open()))
        assert float(rows["epe"]) == 0.0 and float(rows["tepe"]) == 0.0 and float(rows["delta_1px"]) == 0.0

    def test_unit_flicker(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[eval]\nthresholds = 0.5, 1\n")
        write_disp(tmp_path / "gt", [np.full((2, 2), 5.0)] * 4)
        write_disp(tmp_path / "pred", [np.full((2, 2), float(t % 2)) for t in range(4)])
        assert main(["eval", "--config", str(cfg), "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"),
                     "--out", str(tmp_path / "o")]) == 0
        rows = dict(csv.reader((tmp_path / "o" / "report.csv").open()))
        assert float(rows["tepe"]) == 1.0 and float(rows["delta_0.5px"]) == 1.0
        assert (tmp_path / "o" / "report.txt").exists()

    def test_matches_metrics_module(self, tmp_path, rng):
        from vidstereo.data import DisparityVideo
        gt = rng.uniform(0, 8, (3, 4, 5)).astype(np.float32)
        gt[0, 1, 1] = np.inf  # invalid pixel
        pred = (gt + rng.normal(size=gt.shape)).astype(np.float32)
        pred[0, 1, 1] = 0.0
        write_disp(tmp_path / "gt", gt)
        write_disp(tmp_path / "pred", pred)
        assert main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"), "--out", str(tmp_path / "o")]) == 0
        valid = np.isfinite(gt)
        ref = evaluate(pred.astype(np.float64), DisparityVideo(np.where(valid, gt, 0).astype(np.float64), valid))
        rows = dict(csv.reader((tmp_path / "o" / "report.csv").open()))
        assert float(rows["epe"]) == ref.epe and float(rows["tepe"]) == ref.tepe
        assert float(rows["delta_3px"]) == ref.delta_t[3.0]

    def test_frame_count_mismatch(self, tmp_path, capsys):
        write_disp(tmp_path / "gt", [np.zeros((2, 2))] * 3)
        write_disp(tmp_path / "pred", [np.zeros((2, 2))] * 2)
        assert main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"), "--out", str(tmp_path / "o")]) == 1
        assert "frames" in capsys.readouterr().err


class TestAblate:
    def test_upsampling_rows_and_determinism(self, tmp_path, config):
        tables = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["ablate", "--config", config, "--axis", "upsampling", "--steps", "1", "--out", str(out)]) == 0
            tables.append((out / "ablation_upsampling.csv").read_text())
        rows = list(csv.reader(tables[0].splitlines()))
        assert rows[0] == ["variant", "tepe", "delta_1px", "epe"]
        assert [r[0] for r in rows[1:]] == ["bilinear", "convex", "temporal_convex"]
        assert tables[0] == tables[1]

    def test_stage_rows(self, tmp_path, config):
        cfg = tmp_path / "c.ini"
        cfg.write_text(TINY_CONFIG.replace("height = 16\nwidth = 32", "height = 32\nwidth = 32")
                       .replace("crop = 16, 32", "crop = 32, 32"))
        assert main(["ablate", "--config", str(cfg), "--axis", "stages", "--steps", "1", "--out", str(tmp_path / "o")]) == 0
        rows = list(csv.reader((tmp_path / "o" / "ablation_stages.csv").open()))
        assert [r[0] for r in rows[1:]] == ["16-8-4", "32-16-8-4"]

    def test_unknown_axis(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["ablate", "--axis", "colour"])
        assert exc.value.code == 2
        assert capsys.readouterr().err.count("\n") == 1


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "vidstereo", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "generate" in res.stdout
