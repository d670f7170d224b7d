"""Standard gradient checks of the four training losses on synthetic problems."""
from __future__ import annotations

import numpy as np

from . import gradients as G
from .losses import (_warp_coords, build_pseudo_gt, photometric_loss, radar_loss, reconstruct_view,
                     smoothness, velocity_loss)
from .pipeline import prepare_supervision
from .synth import generate


def _pick(rng, candidates: np.ndarray, n: int) -> np.ndarray:
    """Up to ``n`` distinct rows of ``candidates`` in random order."""
    order = rng.permutation(len(candidates))
    return candidates[order[:n]]


def _sample_until(rng, candidates, n, accept):
    """Random candidates, skipping rejected ones, until ``n`` are accepted."""
    out = []
    for idx in candidates[rng.permutation(len(candidates))]:
        if accept(tuple(int(i) for i in idx)):
            out.append(idx)
            if len(out) == n:
                break
    return np.array(out).reshape(-1, candidates.shape[1])


def check_photometric(seed: int = 0, points: int = 500, flip: bool = False, h: float = 1e-4,
                      rtol: float = 1e-4) -> G.GradCheckResult:
    """L_p with respect to depth, through warping, bilinear sampling and SSIM."""
    scene = generate(seed, width=96, height=64, n_boxes=2, depth_range=(6.0, 20.0), n_gt_samples=10,
                     ego_speed=12.0)
    rng = np.random.default_rng(seed)
    depth = scene.depth * (1.0 + 0.05 * rng.standard_normal(scene.depth.shape))
    cam, sources, poses, target = scene.cam, scene.sources, scene.source_poses, scene.target

    def f(d):
        warped = [reconstruct_view(s, d, p, cam) for s, p in zip(sources, poses)]
        return photometric_loss(target, sources, [r for r, _ in warped], [v for _, v in warped])[0]

    def structure(d):
        warped = [reconstruct_view(s, d, p, cam) for s, p in zip(sources, poses)]
        recons = [r for r, _ in warped]
        parts = [G.photometric_selection(target, sources, recons, [v for _, v in warped])]
        for p, r in zip(poses, recons):
            us, vs, _, _, _ = _warp_coords(d, p, cam)
            parts += [np.floor(us), np.floor(vs), *np.moveaxis(np.sign(r - target), -1, 0)]
        return np.stack(parts)

    grad = G.photometric_depth_grad(target, sources, depth, poses, cam)
    if flip:
        grad = -grad
    # central-difference rounding noise is ~eps * f / h ~ 1e-13; keep gradients well above it
    cand = np.argwhere(np.abs(grad) > 1e-8)
    base = structure(depth)

    def smooth_at(idx):
        for step in (h, -h):
            x = depth.copy()
            x[idx] += step
            if not np.array_equal(structure(x), base):
                return False
        return True

    idx = _sample_until(rng, cand, points, smooth_at)
    return G.check_gradient("L_p", f, grad, depth, idx, h=h, rtol=rtol)


def check_smoothness(seed: int = 0, points: int = 500, flip: bool = False, h: float = 1e-4,
                     rtol: float = 1e-4) -> G.GradCheckResult:
    rng = np.random.default_rng(seed + 1)
    image = rng.uniform(0, 1, (40, 48, 3))
    depth = rng.uniform(2.0, 30.0, (40, 48))

    def structure(d):
        dn = (1.0 / d) / (1.0 / d).mean()
        return np.concatenate([np.sign(np.diff(dn, axis=1)).ravel(), np.sign(np.diff(dn, axis=0)).ravel()])

    grad = G.smoothness_grad(image, depth)
    if flip:
        grad = -grad
    idx = _pick(rng, np.argwhere(np.ones(depth.shape, dtype=bool)), points)
    return G.check_gradient("L_s", lambda d: smoothness(image, d), grad, depth, idx, h=h, rtol=rtol,
                            structure=structure)


def check_velocity(seed: int = 0, points: int = 500, flip: bool = False, h: float = 1e-4,
                   rtol: float = 1e-4) -> G.GradCheckResult:
    """L_v on ``points`` random translations, one random component each."""
    rng = np.random.default_rng(seed + 2)
    results = []
    while len(results) < points:
        t = rng.uniform(-2.0, 2.0, 3)
        gt = float(rng.uniform(0.0, 3.0))
        if abs(np.linalg.norm(t) - gt) < 10 * h:  # kink of |.|
            continue
        grad = G.velocity_loss_grad(t, gt)
        if flip:
            grad = -grad
        k = np.array([[rng.integers(3)]])
        results.append(G.check_gradient("L_v", lambda x: velocity_loss(x, gt), grad, t, k, h=h, rtol=rtol))
    worst = max(results, key=lambda r: r.rel_error)
    return G.GradCheckResult("L_v", sum(r.n_checked for r in results), sum(r.n_failed for r in results),
                             worst.worst_index, worst.analytic, worst.numeric, worst.rel_error, rtol)


def check_radar(seed: int = 0, points: int = 500, flip: bool = False, h: float = 1e-4,
                rtol: float = 1e-4) -> G.GradCheckResult:
    """L_r with the pseudo ground truth frozen at the starting prediction."""
    scene = generate(seed, width=160, height=96, n_boxes=3, depth_range=(6.0, 20.0), n_gt_samples=10)
    rng = np.random.default_rng(seed + 3)
    start = scene.depth * rng.uniform(0.6, 1.4, scene.depth.shape)
    frame = prepare_supervision(scene)
    pack = build_pseudo_gt(start, frame.entries, frame.assoc)
    # evaluate away from the starting point so |pred - pseudo| is not at its kink
    pred = start + rng.normal(0.0, 0.5, start.shape)
    grad = G.radar_loss_grad(pred, pack)
    if flip:
        grad = -grad

    def structure(x):
        return np.sign(x - pack.pseudo_gt)[pack.mask]

    cand = np.argwhere(pack.mask)
    idx = _pick(rng, cand, points)
    return G.check_gradient("L_r", lambda x: radar_loss(x, pack), grad, pred, idx, h=h, rtol=rtol,
                            structure=structure)


CHECKS = {"L_p": check_photometric, "L_s": check_smoothness, "L_v": check_velocity, "L_r": check_radar}


def run_all(seed: int = 0, points: int = 500, flip: str | None = None) -> list:
    """Run every check; ``flip`` names a loss whose analytic gradient is negated."""
    return [fn(seed, points, flip=(name == flip)) for name, fn in CHECKS.items()]
