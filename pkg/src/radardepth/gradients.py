"""Analytic gradients of the training losses and a finite-difference checker.

Absolute values are differentiated as ``sign(x)`` with ``sign(0) = 0``.
Piecewise-constant selections (automask, per-pixel source choice, region
masks) are held fixed, which is exact away from their switching points.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import CameraModel, PoseSE3
from .losses import (SSIM_C1, SSIM_C2, SupervisionPack, _bilinear, _radar_norm, _warp_coords,
                     avg_pool3, photometric_error, reconstruct_view)


def radar_loss_grad(prediction, pack: SupervisionPack, normalize: str = "masked") -> np.ndarray:
    """d L_r / d prediction with the pseudo ground truth held constant."""
    prediction = np.asarray(prediction, dtype=np.float64)
    g = np.zeros_like(prediction)
    n = _radar_norm(pack, prediction, normalize)
    if n:
        g[pack.mask] = np.sign(prediction[pack.mask] - pack.pseudo_gt[pack.mask]) / n
    return g


def velocity_loss_grad(t, gt_translation_norm: float) -> np.ndarray:
    t = t.translation if isinstance(t, PoseSE3) else np.asarray(t, dtype=float)
    norm = np.linalg.norm(t)
    if norm == 0:
        return np.zeros(3)
    return np.sign(norm - gt_translation_norm) * t / norm


def smoothness_grad(image, depth) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    inv = 1.0 / depth
    m = inv.mean()
    dn = inv / m
    g = np.zeros_like(dn)  # dL / d dn
    dx = np.diff(dn, axis=1)
    if dx.size:
        wx = np.exp(-np.abs(np.diff(image, axis=1)).mean(axis=-1)) * np.sign(dx) / dx.size
        g[:, 1:] += wx
        g[:, :-1] -= wx
    dy = np.diff(dn, axis=0)
    if dy.size:
        wy = np.exp(-np.abs(np.diff(image, axis=0)).mean(axis=-1)) * np.sign(dy) / dy.size
        g[1:, :] += wy
        g[:-1, :] -= wy
    g_inv = g / m - np.sum(g * inv) / (m * m * inv.size)
    return -g_inv / (depth * depth)


def _pool3_adjoint(g: np.ndarray) -> np.ndarray:
    """Transpose of :func:`avg_pool3` (reflect padding folded back)."""
    h, w = g.shape[:2]
    gp = np.zeros((h + 2, w + 2) + g.shape[2:])
    for dy in range(3):
        for dx in range(3):
            gp[dy:dy + h, dx:dx + w] += g
    gp /= 9.0
    rows = gp[1:h + 1].copy()
    rows[1] += gp[0]
    rows[h - 2] += gp[h + 1]
    out = rows[:, 1:w + 1].copy()
    out[:, 1] += rows[:, 0]
    out[:, w - 2] += rows[:, w + 1]
    return out


def ssim_grad(x: np.ndarray, y: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient wrt ``y`` of ``sum(g * ssim(x, y))``."""
    mu_x, mu_y = avg_pool3(x), avg_pool3(y)
    sig_x = avg_pool3(x * x) - mu_x ** 2
    sig_y = avg_pool3(y * y) - mu_y ** 2
    sig_xy = avg_pool3(x * y) - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + SSIM_C1
    a2 = 2 * sig_xy + SSIM_C2
    b1 = mu_x ** 2 + mu_y ** 2 + SSIM_C1
    b2 = sig_x + sig_y + SSIM_C2
    s = a1 * a2 / (b1 * b2)
    g_mu = g * s * (2 * mu_x / a1 - 2 * mu_x / a2 - 2 * mu_y / b1 + 2 * mu_y / b2)
    g_yy = -g * s / b2
    g_xy = 2 * g * s / a2
    return _pool3_adjoint(g_mu) + 2 * y * _pool3_adjoint(g_yy) + x * _pool3_adjoint(g_xy)


def photometric_error_grad(target, recon, g_pe, alpha: float = 0.85) -> np.ndarray:
    """Gradient wrt ``recon`` of ``sum(g_pe * photometric_error(target, recon))``."""
    target = np.asarray(target, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    c = target.shape[-1]
    grad = (1 - alpha) / c * g_pe[..., None] * np.sign(recon - target)
    g_ssim = np.broadcast_to(-0.5 * alpha / c * g_pe[..., None], target.shape)
    return grad + ssim_grad(target, recon, g_ssim)


def photometric_selection(target, sources, recons, valids=None, alpha: float = 0.85):
    """Per-pixel chosen source (-1 when unsupervised) of the photometric loss."""
    pes = np.stack([photometric_error(target, r, alpha) for r in recons])
    if valids is not None:
        pes = np.where(np.stack(valids), pes, np.inf)
    pe_min = pes.min(axis=0)
    arg = pes.argmin(axis=0)
    identity = np.stack([photometric_error(target, s, alpha) for s in sources]).min(axis=0)
    mask = np.isfinite(pe_min) & (identity > pe_min)
    return np.where(mask, arg, -1)


def photometric_loss_grad(target, sources, recons, valids=None, alpha: float = 0.85):
    """d L_p / d recon_s for every source reconstruction."""
    sel = photometric_selection(target, sources, recons, valids, alpha)
    n = int((sel >= 0).sum())
    grads = []
    for s, r in enumerate(recons):
        g_pe = (sel == s).astype(np.float64) / n if n else np.zeros(sel.shape)
        grads.append(photometric_error_grad(target, r, g_pe, alpha))
    return grads


def photometric_depth_grad(target, sources, depth, poses: Sequence[PoseSE3], cam: CameraModel,
                           alpha: float = 0.85) -> np.ndarray:
    """d L_p / d depth, chaining through inverse warping and bilinear sampling."""
    depth = np.asarray(depth, dtype=np.float64)
    warped = [reconstruct_view(s, depth, p, cam) for s, p in zip(sources, poses)]
    recons = [r for r, _ in warped]
    valids = [v for _, v in warped]
    g_recons = photometric_loss_grad(target, sources, recons, valids, alpha)
    h, w = depth.shape
    out = np.zeros_like(depth)
    for src, pose, g_r in zip(sources, poses, g_recons):
        src = np.asarray(src, dtype=np.float64)
        us, vs, z, a, pts = _warp_coords(depth, pose, cam)
        _, (i00, i01, i10, i11, fx, fy) = _bilinear(src, us, vs)
        d_du = (1 - fy) * (i01 - i00) + fy * (i11 - i10)
        d_dv = (i10 + fx * (i11 - i10)) - (i00 + fx * (i01 - i00))
        d_du = d_du * ((us > 0) & (us < w - 1))[..., None]
        d_dv = d_dv * ((vs > 0) & (vs < h - 1))[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            dus = cam.fx * (a[..., 0] * z - pts[..., 0] * a[..., 2]) / (z * z)
            dvs = cam.fy * (a[..., 1] * z - pts[..., 1] * a[..., 2]) / (z * z)
        contrib = np.sum(g_r * (d_du * dus[..., None] + d_dv * dvs[..., None]), axis=-1)
        out += np.nan_to_num(contrib)
    return out


# -- finite differences -----------------------------------------------------

@dataclass
class GradCheckResult:
    name: str
    n_checked: int
    n_failed: int
    worst_index: tuple | None
    analytic: float
    numeric: float
    rel_error: float
    rtol: float

    @property
    def passed(self) -> bool:
        return self.n_failed == 0 and self.n_checked > 0

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.n_checked} points, worst rel err "
                f"{self.rel_error:.3e} at {self.worst_index} "
                f"(analytic {self.analytic:.6e}, numeric {self.numeric:.6e})")


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, index, h: float = 1e-4) -> float:
    xp = x.copy()
    xm = x.copy()
    xp[index] += h
    xm[index] -= h
    return (f(xp) - f(xm)) / (2 * h)


def relative_error(a: float, b: float, floor: float = 1e-12) -> float:
    scale = max(abs(a), abs(b))
    if scale < floor:
        return 0.0
    return abs(a - b) / scale


def check_gradient(name: str, f, grad: np.ndarray, x: np.ndarray, indices, h: float = 1e-4,
                   rtol: float = 1e-4, structure=None) -> GradCheckResult:
    """Compare ``grad`` against central differences of ``f`` at ``indices``.

    ``structure(x)`` optionally returns an array describing the discrete
    state of the loss (selections, signs); points whose state changes within
    ``±h`` sit on a kink and are skipped.
    """
    checked = failed = 0
    worst = (None, 0.0, 0.0, -1.0)
    base = structure(x) if structure is not None else None
    for idx in indices:
        idx = tuple(int(i) for i in np.atleast_1d(idx))
        if structure is not None:
            xp = x.copy()
            xm = x.copy()
            xp[idx] += h
            xm[idx] -= h
            if not (np.array_equal(structure(xp), base) and np.array_equal(structure(xm), base)):
                continue
        num = central_difference(f, x, idx, h)
        ana = float(grad[idx])
        err = relative_error(ana, num)
        checked += 1
        failed += err > rtol
        if err > worst[3]:
            worst = (idx, ana, num, err)
    return GradCheckResult(name, checked, failed, worst[0], worst[1], worst[2], max(worst[3], 0.0), rtol)
