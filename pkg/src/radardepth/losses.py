"""Self-supervised training objectives and the radar supervision loss.

All rasters are numpy arrays: images (H, W, 3) in [0, 1], depth (H, W) in
meters.  Poses map target-camera points into the source camera.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .association import BinaryAssociation
from .geometry import CameraModel, PoseSE3
from .radar import ProjectedRadar

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


_EDGE_TOL = 1e-6  # pixels


class NumericalError(ArithmeticError):
    """A loss component is NaN or infinite."""


# -- view synthesis ---------------------------------------------------------

def _warp_coords(depth, pose: PoseSE3, cam: CameraModel):
    h, w = depth.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    ray = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    a = ray @ pose.rotation.T
    pts = depth[..., None] * a + pose.translation
    z = pts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        us = cam.fx * pts[..., 0] / z + cam.cx
        vs = cam.fy * pts[..., 1] / z + cam.cy
    return us, vs, z, a, pts


def _bilinear(img, us, vs):
    """Border-clamped bilinear sampling at continuous pixel coordinates."""
    h, w = img.shape[:2]
    uc = np.clip(np.nan_to_num(us, nan=0.0), 0.0, w - 1.0)
    vc = np.clip(np.nan_to_num(vs, nan=0.0), 0.0, h - 1.0)
    x0 = np.clip(np.floor(uc).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(vc).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (uc - x0)[..., None]
    fy = (vc - y0)[..., None]
    i00, i01 = img[y0, x0], img[y0, x1]
    i10, i11 = img[y1, x0], img[y1, x1]
    top = i00 + fx * (i01 - i00)
    bot = i10 + fx * (i11 - i10)
    return top + fy * (bot - top), (i00, i01, i10, i11, fx, fy)


def reconstruct_view(source: np.ndarray, depth: np.ndarray, pose: PoseSE3, cam: CameraModel):
    """Inverse-warp ``source`` into the target view.

    Returns ``(recon, valid)``; ``valid`` is False where the warped sample
    falls outside the source raster or behind the source camera.
    """
    source = np.asarray(source, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    us, vs, z, _, _ = _warp_coords(depth, pose, cam)
    h, w = depth.shape
    tol = _EDGE_TOL  # absorbs rounding of samples that land exactly on the border
    valid = ((z > 0) & (us >= -tol) & (us <= w - 1 + tol) & (vs >= -tol) & (vs <= h - 1 + tol)
             & (depth > 0))
    recon, _ = _bilinear(source, us, vs)
    return recon, valid


# -- photometric terms ------------------------------------------------------

def avg_pool3(x: np.ndarray) -> np.ndarray:
    """3x3 mean over a reflect-padded (H, W[, C]) array."""
    pad = [(1, 1), (1, 1)] + [(0, 0)] * (x.ndim - 2)
    p = np.pad(x, pad, mode="reflect")
    h, w = x.shape[:2]
    out = np.zeros_like(x, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += p[dy:dy + h, dx:dx + w]
    return out / 9.0


def ssim(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-pixel, per-channel SSIM with 3x3 windows."""
    mu_x, mu_y = avg_pool3(x), avg_pool3(y)
    sigma_x = avg_pool3(x * x) - mu_x ** 2
    sigma_y = avg_pool3(y * y) - mu_y ** 2
    sigma_xy = avg_pool3(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sigma_xy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2)
    return num / den


def photometric_error(target: np.ndarray, recon: np.ndarray, alpha: float = 0.85) -> np.ndarray:
    """Per-pixel ``(1-alpha) * L1 + alpha/2 * (1 - SSIM)``, averaged over channels."""
    target = np.asarray(target, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    l1 = np.abs(target - recon).mean(axis=-1)
    dssim = (1.0 - ssim(target, recon)).mean(axis=-1)
    return (1.0 - alpha) * l1 + 0.5 * alpha * dssim


def min_reprojection(target, recons: Sequence[np.ndarray], valids=None, alpha: float = 0.85):
    """Per-pixel minimum photometric error over sources.

    Returns ``(pe_min, argmin)``; pixels invalid in every source get
    ``inf`` and argmin -1.
    """
    if len(recons) == 0:
        raise ValueError("min_reprojection needs at least one reconstruction")
    pes = np.stack([photometric_error(target, r, alpha) for r in recons])
    if valids is not None:
        pes = np.where(np.stack(valids), pes, np.inf)
    pe_min = pes.min(axis=0)
    arg = pes.argmin(axis=0)
    arg[np.isinf(pe_min)] = -1
    return pe_min, arg


def automask(target, sources: Sequence[np.ndarray], recons: Sequence[np.ndarray], valids=None,
             alpha: float = 0.85) -> np.ndarray:
    """True where warping explains the target better than any unwarped source."""
    identity = np.stack([photometric_error(target, s, alpha) for s in sources]).min(axis=0)
    pe_min, _ = min_reprojection(target, recons, valids, alpha)
    return np.isfinite(pe_min) & (identity > pe_min)


def photometric_loss(target, sources, recons, valids=None, alpha: float = 0.85):
    """Minimum-reprojection photometric loss averaged over automasked pixels.

    Returns ``(value, pe_min, mask)``.
    """
    pe_min, _ = min_reprojection(target, recons, valids, alpha)
    identity = np.stack([photometric_error(target, s, alpha) for s in sources]).min(axis=0)
    mask = np.isfinite(pe_min) & (identity > pe_min)
    n = int(mask.sum())
    value = float(pe_min[mask].sum() / n) if n else 0.0
    return value, pe_min, mask


def smoothness(image: np.ndarray, depth: np.ndarray) -> float:
    """Edge-aware smoothness of the mean-normalized inverse depth.

    Each direction is averaged over its forward differences; a direction
    with no differences (single row or column) contributes 0.
    """
    image = np.asarray(image, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("smoothness needs positive depth everywhere")
    inv = 1.0 / depth
    dn = inv / inv.mean()
    if image.ndim == 2:
        image = image[..., None]
    total = 0.0
    gx = np.abs(np.diff(dn, axis=1))
    if gx.size:
        total += float(np.mean(gx * np.exp(-np.abs(np.diff(image, axis=1)).mean(axis=-1))))
    gy = np.abs(np.diff(dn, axis=0))
    if gy.size:
        total += float(np.mean(gy * np.exp(-np.abs(np.diff(image, axis=0)).mean(axis=-1))))
    return total


def velocity_loss(pred, gt_translation_norm: float) -> float:
    """``| ||t_pred|| - ||t_gt|| |``; ``pred`` is a pose or a translation."""
    t = pred.translation if isinstance(pred, PoseSE3) else np.asarray(pred, dtype=float)
    if gt_translation_norm < 0:
        raise ValueError("ground-truth translation norm must be non-negative")
    return abs(float(np.linalg.norm(t)) - float(gt_translation_norm))


# -- radar supervision ------------------------------------------------------

@dataclass
class SupervisionPack:
    """Pseudo ground truth for the radar loss.

    ``deltas[j]`` is the seed residual of region j (NaN for seeds without a
    region).  ``pseudo_gt`` is a frozen copy: later changes to the prediction
    do not move it.
    """

    pseudo_gt: np.ndarray
    mask: np.ndarray
    region_id: np.ndarray
    deltas: np.ndarray
    seed_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    seed_cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())


def build_pseudo_gt(prediction: np.ndarray, entries: ProjectedRadar,
                    assoc: BinaryAssociation) -> SupervisionPack:
    """Shift the prediction inside each region by its seed residual.

    The residual is radar depth minus predicted depth at the seed pixel, so
    depth variation predicted inside an object is preserved.
    """
    prediction = np.asarray(prediction, dtype=np.float64)
    h, w = prediction.shape
    rows, cols = entries.rows, entries.cols
    deltas = np.full(len(entries), np.nan)
    mask = assoc.mask.copy()
    region = assoc.region_id.copy()
    for j in np.unique(region[mask]):
        r, c = rows[j], cols[j]
        ok = 0 <= r < h and 0 <= c < w
        pred = prediction[r, c] if ok else np.nan
        if not (np.isfinite(pred) and pred > 0):
            warnings.warn(f"radar seed {j} has no valid prediction; region dropped", RuntimeWarning)
            drop = region == j
            mask[drop] = False
            region[drop] = -1
            continue
        deltas[j] = entries.depth[j] - pred
    pseudo = np.zeros_like(prediction)
    pseudo[mask] = prediction[mask] + deltas[region[mask]]
    return SupervisionPack(pseudo, mask, region, deltas, rows, cols)


def radar_loss(prediction: np.ndarray, pack: SupervisionPack, normalize: str = "masked") -> float:
    """Mean absolute deviation from the pseudo ground truth on supervised pixels.

    ``normalize="masked"`` divides by the number of supervised pixels,
    ``"all"`` by the number of image pixels.  No supervision gives 0.
    """
    n = _radar_norm(pack, prediction, normalize)
    if n == 0:
        return 0.0
    diff = np.abs(np.asarray(prediction, dtype=np.float64) - pack.pseudo_gt)
    return float(diff[pack.mask].sum() / n)


def _radar_norm(pack, prediction, normalize):
    if normalize == "masked":
        return pack.n_masked if pack.n_masked else 0
    if normalize == "all":
        return int(np.asarray(prediction).size) if pack.n_masked else 0
    raise ValueError(f"unknown normalization {normalize!r}")


# -- combination ------------------------------------------------------------

@dataclass
class LossReport:
    L_p: float
    L_s: float
    L_v: float
    L_r: float
    total: float
    lambda1: float
    lambda2: float
    lambda3: float

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "LossReport":
        vals = {}
        for line in text.splitlines():
            if line.strip():
                k, v = line.split("=", 1)
                vals[k.strip()] = float(v)
        return cls(**vals)


def total_loss(L_p: float, L_s: float, L_v: float, L_r: float, lambda1: float = 1e-3,
               lambda2: float = 0.02, lambda3: float = 0.2) -> LossReport:
    comps = {"L_p": L_p, "L_s": L_s, "L_v": L_v, "L_r": L_r}
    for name, val in comps.items():
        if not math.isfinite(val):
            raise NumericalError(f"{name} is not finite ({val})")
        if val < 0:
            raise ValueError(f"{name} is negative ({val})")
    total = L_p + lambda1 * L_s + lambda2 * L_v + lambda3 * L_r
    return LossReport(float(L_p), float(L_s), float(L_v), float(L_r), float(total),
                      lambda1, lambda2, lambda3)


def upsample_bilinear(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Half-pixel-aligned bilinear resize of a 2D raster."""
    h, w = x.shape
    H, W = shape
    ys = np.clip((np.arange(H) + 0.5) * h / H - 0.5, 0, h - 1)
    xs = np.clip((np.arange(W) + 0.5) * w / W - 0.5, 0, w - 1)
    uu, vv = np.meshgrid(xs, ys)
    out, _ = _bilinear(x[..., None], uu, vv)
    return out[..., 0]


def multiscale_losses(target, sources, depths: Sequence[np.ndarray], poses: Sequence[PoseSE3],
                      cam: CameraModel, alpha: float = 0.85) -> tuple[float, float]:
    """Photometric and smoothness losses averaged over decoder scales.

    Every scale's depth is upsampled to the target resolution first.
    """
    if not depths:
        raise ValueError("need at least one depth scale")
    lp, ls = [], []
    for d in depths:
        d = np.asarray(d, dtype=np.float64)
        if d.shape != target.shape[:2]:
            d = upsample_bilinear(d, target.shape[:2])
        warped = [reconstruct_view(s, d, p, cam) for s, p in zip(sources, poses)]
        lp.append(photometric_loss(target, sources, [r for r, _ in warped],
                                   [v for _, v in warped], alpha)[0])
        ls.append(smoothness(target, d))
    return float(np.mean(lp)), float(np.mean(ls))
