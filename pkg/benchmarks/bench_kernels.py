"""Time the compiled correlation/warp kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 16x32] [--channels 16] [--frames 5]

Shapes default to the 1/4-scale feature grid of a 64x128 training crop.
"""

import argparse
import timeit

import numpy as np

from vidstereo import kernels, kernels_py


def parse_size(text):
    h, w = text.lower().split("x")
    return int(h), int(w)


def cases(fl, fr, d, g_local, g_pairs):
    yield "warp fwd", lambda m: m.warp_fwd(fr, d)
    yield "warp bwd", lambda m: m.warp_bwd(fr, d, fl)
    for rx, ry in ((4, 0), (1, 1)):
        yield f"local fwd ({rx},{ry})", lambda m, rx=rx, ry=ry: m.corr_local_fwd(fl, fr, rx, ry)
        yield f"local bwd ({rx},{ry})", lambda m, rx=rx, ry=ry: m.corr_local_bwd(fl, fr, g_local[(rx, ry)], rx, ry)
        yield f"pairs fwd ({rx},{ry})", lambda m, rx=rx, ry=ry: m.corr_pairs_fwd(fl, fr, rx, ry)
        yield f"pairs bwd ({rx},{ry})", lambda m, rx=rx, ry=ry: m.corr_pairs_bwd(fl, fr, g_pairs[(rx, ry)], rx, ry)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=parse_size, default=(16, 32))
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--frames", type=int, default=5)
    args = ap.parse_args()

    try:
        compiled = kernels.backend_module("c")
    except ImportError:
        compiled = None
        print("compiled kernels not built; timing the numpy fallback only")

    rng = np.random.default_rng(0)
    H, W = args.size
    shape = (1, args.channels, args.frames, H, W)
    fl = rng.normal(size=shape).astype(np.float32)
    fr = rng.normal(size=shape).astype(np.float32)
    d = rng.uniform(0, 8, size=(1, args.frames, H, W)).astype(np.float32)
    g_local = {w: rng.normal(size=(1, 9, args.frames, H, W)).astype(np.float32) for w in ((4, 0), (1, 1))}
    g_pairs = {w: rng.normal(size=(1, 81, args.frames, H, W)).astype(np.float32) for w in ((4, 0), (1, 1))}

    print(f"features {shape}, float32, best of {args.repeat}")
    print(f"{'kernel':<18} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, fn in cases(fl, fr, d, g_local, g_pairs):
        py = min(timeit.repeat(lambda: fn(kernels_py), number=1, repeat=args.repeat)) * 1e3
        if compiled is None:
            print(f"{name:<18} {py:>10.2f} {'-':>10} {'-':>8}")
            continue
        c = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18} {py:>10.2f} {c:>10.2f} {py / c:>7.1f}x")


if __name__ == "__main__":
    main()
