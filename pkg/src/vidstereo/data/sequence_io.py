"""On-disk stereo sequences.

Layout::

    <dir>/left/000000.png ...     8-bit PNG or PPM, numbered
    <dir>/right/000000.png ...
    <dir>/disp/000000.pfm ...     optional ground truth; inf marks invalid pixels
    <dir>/manifest.json           optional {"focal_px": ..., "baseline_m": ..., "frames": T}

Frames are paired by the integer in their file names.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .pfm import load_pfm, save_pfm
from .types import DisparityVideo, StereoSequence

IMAGE_SUFFIXES = (".png", ".ppm")
_NUMBER = re.compile(r"(\d+)")


def frame_index(path: Path) -> int:
    found = _NUMBER.findall(path.stem)
    if not found:
        raise ValueError(f"no frame number in file name {path.name!r}")
    return int(found[-1])


def numbered_files(folder: Path, suffixes) -> list[Path]:
    if not folder.is_dir():
        return []
    files = [p for p in folder.iterdir() if p.suffix.lower() in suffixes]
    return sorted(files, key=frame_index)


def read_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def read_manifest(root: Path) -> dict:
    path = root / "manifest.json"
    if not path.exists():
        return {}
    return json.loads(path.read_text())


def load_sequence(root, focal_px: float | None = None, baseline_m: float | None = None) -> StereoSequence:
    """Read a sequence directory; explicit calibration overrides the manifest."""
    root = Path(root)
    lefts = numbered_files(root / "left", IMAGE_SUFFIXES)
    rights = numbered_files(root / "right", IMAGE_SUFFIXES)
    if not lefts:
        raise FileNotFoundError(f"no left frames under {root / 'left'}")
    if len(lefts) != len(rights):
        raise ValueError(f"{len(lefts)} left frames but {len(rights)} right frames in {root}")
    if [frame_index(p) for p in lefts] != [frame_index(p) for p in rights]:
        raise ValueError(f"left and right frame numbers differ in {root}")
    left = np.stack([read_image(p) for p in lefts])
    right = np.stack([read_image(p) for p in rights])

    gt = None
    disps = numbered_files(root / "disp", (".pfm",))
    if disps:
        if len(disps) != len(lefts):
            raise ValueError(f"{len(disps)} disparity maps for {len(lefts)} frames in {root}")
        values = np.stack([load_pfm(p) for p in disps]).astype(np.float64)
        valid = np.isfinite(values)
        gt = DisparityVideo(np.where(valid, values, 0.0), valid)

    manifest = read_manifest(root)
    focal = focal_px if focal_px is not None else manifest.get("focal_px", 1.0)
    base = baseline_m if baseline_m is not None else manifest.get("baseline_m", 1.0)
    return StereoSequence(left, right, float(focal), float(base), gt)


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)


def save_sequence(seq: StereoSequence, root, extra_manifest: dict | None = None) -> None:
    """Write frames as PNG, ground truth as PFM (inf where invalid), and a manifest."""
    root = Path(root)
    for sub in ("left", "right"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for t in range(seq.num_frames):
        Image.fromarray(to_uint8(seq.left[t])).save(root / "left" / f"{t:06d}.png")
        Image.fromarray(to_uint8(seq.right[t])).save(root / "right" / f"{t:06d}.png")
    if seq.gt is not None:
        (root / "disp").mkdir(exist_ok=True)
        for t in range(seq.num_frames):
            d = np.where(seq.gt.valid[t], seq.gt.values[t], np.inf)
            save_pfm(root / "disp" / f"{t:06d}.pfm", d)
    manifest = {"frames": seq.num_frames, "height": seq.size[0], "width": seq.size[1],
                "focal_px": seq.focal_px, "baseline_m": seq.baseline_m}
    manifest.update(extra_manifest or {})
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
