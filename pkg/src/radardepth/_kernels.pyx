# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops.

window_min_filter
    Keep flag per radar entry: 1 when the entry's depth is below
    (window minimum + beta) for every sliding window covering its pixel.
bilateral_max
    Per-pixel maximum bilateral weight over seeds, each seed confined to an
    inclusive pixel rectangle, plus the index of the maximising seed (lowest
    index on ties, -1 where no seed reaches).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()


cdef Py_ssize_t _lower(const long long[:] a, long long x) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef Py_ssize_t _upper(const long long[:] a, long long x) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def window_min_filter(cols, rows, depth, xs, ys, long long win_w, long long win_h, double beta):
    cdef const long long[:] c = np.ascontiguousarray(cols, dtype=np.int64)
    cdef const long long[:] r = np.ascontiguousarray(rows, dtype=np.int64)
    cdef const double[:] d = np.ascontiguousarray(depth, dtype=np.float64)
    cdef const long long[:] wx = np.ascontiguousarray(xs, dtype=np.int64)
    cdef const long long[:] wy = np.ascontiguousarray(ys, dtype=np.int64)
    cdef Py_ssize_t n = d.shape[0], nxw = wx.shape[0], nyw = wy.shape[0]
    mins_arr = np.full(nxw * nyw, np.inf)
    keep_arr = np.ones(n, dtype=np.uint8)
    cdef double[:] mins = mins_arr
    cdef unsigned char[:] keep = keep_arr
    cdef Py_ssize_t i, a, b, a0, a1, b0, b1, wid
    with nogil:
        for i in range(n):
            a0 = _lower(wx, c[i] - win_w + 1)
            a1 = _upper(wx, c[i])
            b0 = _lower(wy, r[i] - win_h + 1)
            b1 = _upper(wy, r[i])
            for b in range(b0, b1):
                for a in range(a0, a1):
                    wid = b * nxw + a
                    if d[i] < mins[wid]:
                        mins[wid] = d[i]
        for i in range(n):
            a0 = _lower(wx, c[i] - win_w + 1)
            a1 = _upper(wx, c[i])
            b0 = _lower(wy, r[i] - win_h + 1)
            b1 = _upper(wy, r[i])
            for b in range(b0, b1):
                for a in range(a0, a1):
                    if d[i] >= mins[b * nxw + a] + beta:
                        keep[i] = 0
    return keep_arr


def bilateral_max(image, seed_cols, seed_rows, bounds, sigma_x, sigma_y, double sigma_r):
    cdef const double[:, :, :] img = np.ascontiguousarray(image, dtype=np.float64)
    cdef const long long[:] sc = np.ascontiguousarray(seed_cols, dtype=np.int64)
    cdef const long long[:] sr = np.ascontiguousarray(seed_rows, dtype=np.int64)
    cdef const long long[:, :] bb = np.ascontiguousarray(bounds, dtype=np.int64).reshape(-1, 4)
    cdef const double[:] sx = np.ascontiguousarray(sigma_x, dtype=np.float64)
    cdef const double[:] sy = np.ascontiguousarray(sigma_y, dtype=np.float64)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], nch = img.shape[2]
    values_arr = np.zeros((h, w))
    argmax_arr = np.full((h, w), -1, dtype=np.int64)
    cdef double[:, :] values = values_arr
    cdef long long[:, :] argmax = argmax_arr
    cdef double inv_r = 1.0 / (2.0 * sigma_r * sigma_r)
    cdef double ix, iy, du, dv, spatial, rng, diff, wgt
    cdef Py_ssize_t j, row, col, ch, uc, vr
    with nogil:
        for j in range(sc.shape[0]):
            uc = sc[j]
            vr = sr[j]
            ix = 1.0 / (2.0 * sx[j] * sx[j])
            iy = 1.0 / (2.0 * sy[j] * sy[j])
            for row in range(bb[j, 1], bb[j, 3] + 1):
                dv = <double>(row - vr)
                for col in range(bb[j, 0], bb[j, 2] + 1):
                    du = <double>(col - uc)
                    spatial = dv * dv * iy + du * du * ix
                    rng = 0.0
                    for ch in range(nch):
                        diff = img[row, col, ch] - img[vr, uc, ch]
                        rng = rng + diff * diff
                    wgt = exp(-spatial - rng * inv_r)
                    if wgt > values[row, col]:
                        values[row, col] = wgt
                        argmax[row, col] = j
    return values_arr, argmax_arr
