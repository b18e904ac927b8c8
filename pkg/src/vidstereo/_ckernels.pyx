# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled correlation and warp kernels.

Same contracts as ``vidstereo.kernels_py``; the all-pairs volume is computed by
direct accumulation over both offsets rather than through the relative-offset
table used by the numpy version.
"""

import numpy as np
from libc.math cimport floor

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _imax(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a > b else b


cdef inline Py_ssize_t _imin(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a < b else b


def _dtype_of(real[:, :, :, :, ::1] arr):
    if real is float:
        return np.float32
    return np.float64


def corr_local_fwd(real[:, :, :, :, ::1] fl, real[:, :, :, :, ::1] fr, int rx, int ry):
    cdef Py_ssize_t B = fl.shape[0], C = fl.shape[1], T = fl.shape[2]
    cdef Py_ssize_t H = fl.shape[3], W = fl.shape[4]
    cdef Py_ssize_t nx = 2 * rx + 1, M = nx * (2 * ry + 1)
    out_arr = np.zeros((B, M, T, H, W), dtype=_dtype_of(fl))
    cdef real[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, c, t, y, x, ox, oy, ylo, yhi, xlo, xhi
    with nogil:
        for b in range(B):
            for i in range(M):
                oy = i // nx - ry
                ox = i % nx - rx
                ylo = _imax(0, -oy)
                yhi = _imin(H, H - oy)
                xlo = _imax(0, -ox)
                xhi = _imin(W, W - ox)
                for c in range(C):
                    for t in range(T):
                        for y in range(ylo, yhi):
                            for x in range(xlo, xhi):
                                out[b, i, t, y, x] += fl[b, c, t, y, x] * fr[b, c, t, y + oy, x + ox]
    return out_arr


def corr_local_bwd(real[:, :, :, :, ::1] fl, real[:, :, :, :, ::1] fr,
                   real[:, :, :, :, ::1] g, int rx, int ry):
    cdef Py_ssize_t B = fl.shape[0], C = fl.shape[1], T = fl.shape[2]
    cdef Py_ssize_t H = fl.shape[3], W = fl.shape[4]
    cdef Py_ssize_t nx = 2 * rx + 1, M = nx * (2 * ry + 1)
    dfl_arr = np.zeros_like(np.asarray(fl))
    dfr_arr = np.zeros_like(np.asarray(fr))
    cdef real[:, :, :, :, ::1] dfl = dfl_arr
    cdef real[:, :, :, :, ::1] dfr = dfr_arr
    cdef Py_ssize_t b, i, c, t, y, x, ox, oy, ylo, yhi, xlo, xhi
    cdef real gv
    with nogil:
        for b in range(B):
            for i in range(M):
                oy = i // nx - ry
                ox = i % nx - rx
                ylo = _imax(0, -oy)
                yhi = _imin(H, H - oy)
                xlo = _imax(0, -ox)
                xhi = _imin(W, W - ox)
                for c in range(C):
                    for t in range(T):
                        for y in range(ylo, yhi):
                            for x in range(xlo, xhi):
                                gv = g[b, i, t, y, x]
                                dfl[b, c, t, y, x] += gv * fr[b, c, t, y + oy, x + ox]
                                dfr[b, c, t, y + oy, x + ox] += gv * fl[b, c, t, y, x]
    return dfl_arr, dfr_arr


def corr_pairs_fwd(real[:, :, :, :, ::1] fl, real[:, :, :, :, ::1] fr, int rx, int ry):
    cdef Py_ssize_t B = fl.shape[0], C = fl.shape[1], T = fl.shape[2]
    cdef Py_ssize_t H = fl.shape[3], W = fl.shape[4]
    cdef Py_ssize_t nx = 2 * rx + 1, M = nx * (2 * ry + 1)
    out_arr = np.zeros((B, M * M, T, H, W), dtype=_dtype_of(fl))
    cdef real[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, k, c, t, y, x, ax, ay, bx, by, ylo, yhi, xlo, xhi
    with nogil:
        for b in range(B):
            for k in range(M * M):
                ay = (k // M) // nx - ry
                ax = (k // M) % nx - rx
                by = (k % M) // nx - ry
                bx = (k % M) % nx - rx
                ylo = _imax(0, _imax(-ay, -by))
                yhi = _imin(H, _imin(H - ay, H - by))
                xlo = _imax(0, _imax(-ax, -bx))
                xhi = _imin(W, _imin(W - ax, W - bx))
                for c in range(C):
                    for t in range(T):
                        for y in range(ylo, yhi):
                            for x in range(xlo, xhi):
                                out[b, k, t, y, x] += fl[b, c, t, y + ay, x + ax] * fr[b, c, t, y + by, x + bx]
    return out_arr


def corr_pairs_bwd(real[:, :, :, :, ::1] fl, real[:, :, :, :, ::1] fr,
                   real[:, :, :, :, ::1] g, int rx, int ry):
    cdef Py_ssize_t B = fl.shape[0], C = fl.shape[1], T = fl.shape[2]
    cdef Py_ssize_t H = fl.shape[3], W = fl.shape[4]
    cdef Py_ssize_t nx = 2 * rx + 1, M = nx * (2 * ry + 1)
    dfl_arr = np.zeros_like(np.asarray(fl))
    dfr_arr = np.zeros_like(np.asarray(fr))
    cdef real[:, :, :, :, ::1] dfl = dfl_arr
    cdef real[:, :, :, :, ::1] dfr = dfr_arr
    cdef Py_ssize_t b, k, c, t, y, x, ax, ay, bx, by, ylo, yhi, xlo, xhi
    cdef real gv
    with nogil:
        for b in range(B):
            for k in range(M * M):
                ay = (k // M) // nx - ry
                ax = (k // M) % nx - rx
                by = (k % M) // nx - ry
                bx = (k % M) % nx - rx
                ylo = _imax(0, _imax(-ay, -by))
                yhi = _imin(H, _imin(H - ay, H - by))
                xlo = _imax(0, _imax(-ax, -bx))
                xhi = _imin(W, _imin(W - ax, W - bx))
                for c in range(C):
                    for t in range(T):
                        for y in range(ylo, yhi):
                            for x in range(xlo, xhi):
                                gv = g[b, k, t, y, x]
                                dfl[b, c, t, y + ay, x + ax] += gv * fr[b, c, t, y + by, x + bx]
                                dfr[b, c, t, y + by, x + bx] += gv * fl[b, c, t, y + ay, x + ax]
    return dfl_arr, dfr_arr


def warp_fwd(real[:, :, :, :, ::1] f, real[:, :, :, ::1] d):
    cdef Py_ssize_t B = f.shape[0], C = f.shape[1], T = f.shape[2]
    cdef Py_ssize_t H = f.shape[3], W = f.shape[4]
    out_arr = np.zeros_like(np.asarray(f))
    inb_arr = np.zeros((B, T, H, W), dtype=np.bool_)
    cdef real[:, :, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] inb = inb_arr.view(np.uint8)
    cdef Py_ssize_t b, c, t, y, x, x0, x1
    cdef double xs, a
    with nogil:
        for b in range(B):
            for t in range(T):
                for y in range(H):
                    for x in range(W):
                        xs = x - <double>d[b, t, y, x]
                        if xs < 0 or xs > W - 1:
                            continue
                        inb[b, t, y, x] = 1
                        x0 = <Py_ssize_t>floor(xs)
                        a = xs - x0
                        x1 = _imin(x0 + 1, W - 1)
                        for c in range(C):
                            out[b, c, t, y, x] = <real>((1.0 - a) * f[b, c, t, y, x0] + a * f[b, c, t, y, x1])
    return out_arr, inb_arr


def warp_bwd(real[:, :, :, :, ::1] f, real[:, :, :, ::1] d, real[:, :, :, :, ::1] g):
    cdef Py_ssize_t B = f.shape[0], C = f.shape[1], T = f.shape[2]
    cdef Py_ssize_t H = f.shape[3], W = f.shape[4]
    df_arr = np.zeros_like(np.asarray(f))
    dd_arr = np.zeros_like(np.asarray(d))
    cdef real[:, :, :, :, ::1] df = df_arr
    cdef real[:, :, :, ::1] dd = dd_arr
    cdef Py_ssize_t b, c, t, y, x, x0, x1
    cdef double xs, a, acc, gv
    with nogil:
        for b in range(B):
            for t in range(T):
                for y in range(H):
                    for x in range(W):
                        xs = x - <double>d[b, t, y, x]
                        if xs < 0 or xs > W - 1:
                            continue
                        x0 = <Py_ssize_t>floor(xs)
                        a = xs - x0
                        x1 = _imin(x0 + 1, W - 1)
                        acc = 0.0
                        for c in range(C):
                            gv = g[b, c, t, y, x]
                            acc = acc + gv * (f[b, c, t, y, x1] - f[b, c, t, y, x0])
                            df[b, c, t, y, x0] += <real>(gv * (1.0 - a))
                            df[b, c, t, y, x1] += <real>(gv * a)
                        dd[b, t, y, x] = <real>(-acc)
    return df_arr, dd_arr
