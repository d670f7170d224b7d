"""Pure numpy implementations of the hot kernels.

Signatures mirror ``_kernels.pyx`` exactly; see that module for contracts.
"""
import numpy as np


def window_min_filter(cols, rows, depth, xs, ys, win_w, win_h, beta):
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.asarray(rows, dtype=np.int64)
    depth = np.asarray(depth, dtype=np.float64)
    n = len(depth)
    if n == 0:
        return np.ones(0, dtype=np.uint8)
    ix_lo = np.searchsorted(xs, cols - win_w + 1, side="left")
    ix_hi = np.searchsorted(xs, cols, side="right")
    iy_lo = np.searchsorted(ys, rows - win_h + 1, side="left")
    iy_hi = np.searchsorted(ys, rows, side="right")
    nx = np.maximum(ix_hi - ix_lo, 0)
    ny = np.maximum(iy_hi - iy_lo, 0)
    counts = nx * ny
    total = int(counts.sum())
    if total == 0:
        return np.ones(n, dtype=np.uint8)
    entry = np.repeat(np.arange(n), counts)
    k = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    nxe = nx[entry]
    wid = (iy_lo[entry] + k // nxe) * len(xs) + ix_lo[entry] + k % nxe
    mins = np.full(len(xs) * len(ys), np.inf)
    np.minimum.at(mins, wid, depth[entry])
    bad = depth[entry] >= mins[wid] + beta
    return (np.bincount(entry, weights=bad, minlength=n) == 0).astype(np.uint8)


def bilateral_max(image, seed_cols, seed_rows, bounds, sigma_x, sigma_y, sigma_r):
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    values = np.zeros((h, w))
    argmax = np.full((h, w), -1, dtype=np.int64)
    inv_r = 1.0 / (2.0 * sigma_r * sigma_r)
    for j in range(len(seed_cols)):
        c0, r0, c1, r1 = (int(b) for b in bounds[j])
        if c1 < c0 or r1 < r0:
            continue
        uc, vr = int(seed_cols[j]), int(seed_rows[j])
        du = np.arange(c0, c1 + 1, dtype=np.float64) - uc
        dv = np.arange(r0, r1 + 1, dtype=np.float64) - vr
        ix = 1.0 / (2.0 * sigma_x[j] * sigma_x[j])
        iy = 1.0 / (2.0 * sigma_y[j] * sigma_y[j])
        spatial = (dv * dv * iy)[:, None] + (du * du * ix)[None, :]
        diff = image[r0:r1 + 1, c0:c1 + 1] - image[vr, uc]
        rng = np.sum(diff * diff, axis=-1) * inv_r
        wgt = np.exp(-spatial - rng)
        blk = values[r0:r1 + 1, c0:c1 + 1]
        upd = wgt > blk
        blk[upd] = wgt[upd]
        argmax[r0:r1 + 1, c0:c1 + 1][upd] = j
    return values, argmax
