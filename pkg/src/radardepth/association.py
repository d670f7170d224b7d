"""Context-aware expansion of radar seeds over their objects."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .radar import BoundingBox2D, ProjectedRadar, assign_boxes

SIGMA_CLAMP = 1e-3


@dataclass
class WeightRaster:
    values: np.ndarray  # (H, W) max association weight in [0, 1]
    argmax: np.ndarray  # (H, W) seed index reaching the max, -1 where values == 0


@dataclass
class BinaryAssociation:
    mask: np.ndarray       # (H, W) bool
    region_id: np.ndarray  # (H, W) seed index where mask, -1 elsewhere
    gamma: float

    def region_sizes(self) -> dict[int, int]:
        ids, counts = np.unique(self.region_id[self.mask], return_counts=True)
        return dict(zip(ids.tolist(), counts.tolist()))


def adaptive_sigma(u: float, v: float, box: BoundingBox2D, c: float = 1.5,
                   s_min: float = SIGMA_CLAMP) -> tuple[float, float]:
    """Domain smoothing per axis from the seed's position inside its box.

    Seeds near the bottom center of the box get the widest kernel; the
    position factor is clamped to ``s_min`` for seeds on an edge.
    """
    half_w = box.width / 2.0
    d_side = min(u - box.u_min, box.u_max - u)
    d_top = v - box.v_min
    s = max((d_side / half_w) * (d_top / box.height), s_min)
    return c * s * half_w, c * s * box.height / 2.0


def bilateral_weights(image: np.ndarray, entries: ProjectedRadar, boxes: Sequence[BoundingBox2D],
                      sigma_r: float = 1e-5, c: float = 1.5, kernels=None) -> WeightRaster:
    """Max bilateral association weight per pixel over all radar seeds.

    Each seed only reaches pixels inside its own box; outside it the weight
    is exactly zero.  ``image`` is (H, W, 3) in [0, 1].
    """
    kernels = kernels or _backend.kernels
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    h, w = image.shape[:2]
    n = len(entries)
    box_idx = np.where(entries.box >= 0, entries.box, assign_boxes(entries, boxes))
    cols, rows = entries.cols, entries.rows
    bounds = np.zeros((n, 4), dtype=np.int64)
    bounds[:, 0] = 0
    bounds[:, 2] = -1  # empty rectangle unless the seed is usable
    sx = np.ones(n)
    sy = np.ones(n)
    for j in range(n):
        b = box_idx[j]
        if b < 0 or not (0 <= cols[j] < w and 0 <= rows[j] < h):
            continue
        box = boxes[b]
        sx[j], sy[j] = adaptive_sigma(float(cols[j]), float(rows[j]), box, c)
        bounds[j] = box.pixel_bounds((h, w))
    values, argmax = kernels.bilateral_max(image, np.clip(cols, 0, w - 1), np.clip(rows, 0, h - 1),
                                           bounds, sx, sy, float(sigma_r))
    return WeightRaster(values, argmax)


def binarize(weights: WeightRaster, gamma: float = 0.5) -> BinaryAssociation:
    """Pixels whose max weight exceeds ``gamma`` (strictly) become supervised."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must be in (0, 1)")
    mask = weights.values > gamma
    region = np.where(mask, weights.argmax, -1)
    return BinaryAssociation(mask, region, gamma)
