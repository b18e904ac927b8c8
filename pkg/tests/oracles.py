"""Slow, loop-based reference implementations used as independent oracles."""

import itertools
import math

import numpy as np


def corr_local_loops(fl, fr, rx, ry):
    B, C, T, H, W = fl.shape
    M = (2 * rx + 1) * (2 * ry + 1)
    out = np.zeros((B, M, T, H, W))
    for b, t, y, x in itertools.product(range(B), range(T), range(H), range(W)):
        for oy in range(-ry, ry + 1):
            for ox in range(-rx, rx + 1):
                i = (oy + ry) * (2 * rx + 1) + (ox + rx)
                yy, xx = y + oy, x + ox
                if 0 <= yy < H and 0 <= xx < W:
                    out[b, i, t, y, x] = sum(fl[b, c, t, y, x] * fr[b, c, t, yy, xx] for c in range(C))
    return out / math.sqrt(C)


def corr_pairs_loops(fl, fr, rx, ry):
    B, C, T, H, W = fl.shape
    offs = [(ox, oy) for oy in range(-ry, ry + 1) for ox in range(-rx, rx + 1)]
    M = len(offs)
    out = np.zeros((B, M * M, T, H, W))
    for b, t, y, x in itertools.product(range(B), range(T), range(H), range(W)):
        for i, (ax, ay) in enumerate(offs):
            for j, (bx, by) in enumerate(offs):
                y1, x1, y2, x2 = y + ay, x + ax, y + by, x + bx
                if 0 <= y1 < H and 0 <= x1 < W and 0 <= y2 < H and 0 <= x2 < W:
                    s = 0.0
                    for c in range(C):
                        s += fl[b, c, t, y1, x1] * fr[b, c, t, y2, x2]
                    out[b, i * M + j, t, y, x] = s
    return out / math.sqrt(C)


def _clamp(v, n):
    return min(max(v, 0), n - 1)


def unfold_gather(a, kernel=(3, 3, 3)):
    B, C, T, H, W = a.shape
    kt, kh, kw = kernel
    out = np.zeros((B, C, kt * kh * kw, T, H, W))
    for dt, dy, dx in itertools.product(range(kt), range(kh), range(kw)):
        k = (dt * kh + dy) * kw + dx
        for t, y, x in itertools.product(range(T), range(H), range(W)):
            out[:, :, k, t, y, x] = a[:, :, _clamp(t + dt - kt // 2, T), _clamp(y + dy - kh // 2, H),
                                      _clamp(x + dx - kw // 2, W)]
    return out


def convex_upsample_loops(d, logits, alpha, temporal=True):
    """Direct evaluation: out(t, a*y+i, a*x+j) = a * sum_k softmax_k(w) * d(neighbor_k)."""
    B, _, T, H, W = d.shape
    kt = 3 if temporal else 1
    n = kt * 9
    out = np.zeros((B, 1, T, alpha * H, alpha * W))
    for b in range(B):
        for t in range(T):
            for y in range(H):
                for x in range(W):
                    for i in range(alpha):
                        for j in range(alpha):
                            w = np.array([logits[b, (k * alpha + i) * alpha + j, t, y, x] for k in range(n)])
                            w = np.exp(w - w.max())
                            w /= w.sum()
                            acc = 0.0
                            for dt in range(kt):
                                for dy in range(3):
                                    for dx in range(3):
                                        k = (dt * 3 + dy) * 3 + dx
                                        tt = _clamp(t + dt - kt // 2, T)
                                        acc += w[k] * alpha * d[b, 0, tt, _clamp(y + dy - 1, H), _clamp(x + dx - 1, W)]
                            out[b, 0, t, alpha * y + i, alpha * x + j] = acc
    return out


def ray_cast_valid(spec, seq_gt_values, t):
    """Per-pixel occlusion check by casting each left pixel's match into the right view.

    A left pixel is visible in the right view when no surface nearer than its own
    covers the matched right position (x - d, y), and that position lies in the frame.
    """
    from vidstereo.data.synthetic import trajectory

    fb = spec.focal_px * spec.baseline_m
    H, W = spec.height, spec.width
    layers = []
    for layer in spec.layers:
        z = trajectory(layer.depth, spec.frames)[t]
        x0 = layer.x + layer.velocity * t
        layers.append((z, x0, layer.y, layer.width, layer.height))

    def nearest_left(y, x):
        best = None
        for z, x0, y0, w, h in layers:
            if y0 <= y < y0 + h and x0 <= x < x0 + w and (best is None or z < best):
                best = z
        return best

    valid = np.zeros((H, W), dtype=bool)
    for y in range(H):
        for x in range(W):
            z = nearest_left(y, x)
            if z is None:
                z = trajectory(spec.background_depth, spec.frames)[t]
            d = fb / z
            xr = x - round(d) if not spec.subpixel else x - d
            if xr < 0:
                continue
            blocked = False
            for zz, x0, y0, w, h in layers:
                dd = round(fb / zz) if not spec.subpixel else fb / zz
                if zz < z and y0 <= y < y0 + h and x0 - dd <= xr < x0 - dd + w:
                    blocked = True
            valid[y, x] = not blocked
    return valid


def forward_warp_residual(seq):
    """Max color difference between each valid left pixel and the right pixel its disparity lands on.

    Only meaningful for integer-disparity scenes, where the landing spot is a pixel center.
    """
    gt = seq.gt
    worst = 0.0
    T, H, W = gt.shape
    for t in range(T):
        ys, xs = np.nonzero(gt.valid[t])
        d = np.rint(gt.values[t][ys, xs]).astype(int)
        diff = np.abs(seq.left[t][ys, xs] - seq.right[t][ys, xs - d])
        if diff.size:
            worst = max(worst, float(diff.max()))
    return worst
