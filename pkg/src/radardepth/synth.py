"""Deterministic synthetic driving scenes with full ground truth.

World frame: x forward, y left, z up, ground plane z = 0.  The ego frame
shares these axes; the camera looks along ego +x from ``cam_height``.
Objects are fronto-parallel plates (the visible front face of a box) with a
flat per-object albedo; the ground and a far wall carry smooth,
low-frequency color gradients so bilinear resampling stays accurate.

Random draws come from counter-based generators keyed by (seed, entity), so
a scene does not depend on the order in which its parts are generated.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import CameraModel, PoseSE3, compose, invert, pixel_index, project_points
from .metrics import GroundTruthSamples
from .radar import (LABEL_BACKGROUND, LABEL_MULTIPATH, LABEL_OBJECT, LABEL_SEE_THROUGH,
                    BoundingBox2D, RadarSweep)

# ego (x fwd, y left, z up) -> camera (x right, y down, z fwd)
_CAM_R = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])

_ENT_LAYOUT, _ENT_RETURNS, _ENT_BACKGROUND, _ENT_GT, _ENT_TEXTURE = 1, 2, 3, 4, 5


def _rng(seed: int, kind: int, *ids: int) -> np.random.Generator:
    code = kind
    for i in ids:
        code = (code << 20) | (i & 0xFFFFF)
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, code]))


@dataclass
class SynthConfig:
    width: int = 576
    height: int = 320
    focal_ratio: float = 0.79  # focal length / width
    cam_height: float = 1.5
    radar_height: float = 0.5
    n_boxes: int = 3
    depth_range: tuple = (8.0, 40.0)
    box_width_range: tuple = (1.6, 2.2)
    box_height_range: tuple = (1.4, 1.8)
    box_speed_range: tuple = (0.0, 0.0)  # along x, m/s; negative = oncoming
    class_label: str = "car"
    returns_per_box: tuple = (6, 10)
    n_background: int = 30
    p_multipath: float = 0.35
    p_see_through: float = 0.1
    ghost_offset_range: tuple = (3.0, 10.0)
    sweeps_past: int = 3
    sweeps_future: int = 3
    radar_dt: float = 1.0 / 13.0
    camera_dt: float = 1.0 / 12.0
    ego_speed: float = 8.0
    wall_distance: float = 60.0
    n_gt_samples: int = 3000
    min_box_gap_px: float = 2.0

    def __post_init__(self):
        lo, hi = self.depth_range
        if not (2.0 <= lo <= hi <= 80.0):
            raise ValueError("depth_range must lie within [2, 80] m")
        if not 0 <= self.p_multipath <= 1 or not 0 <= self.p_see_through <= 1:
            raise ValueError("clutter probabilities must be in [0, 1]")
        if self.radar_height >= min(self.box_height_range):
            raise ValueError("radar plane must cross every object")

    @property
    def camera(self) -> CameraModel:
        f = self.focal_ratio * self.width
        return CameraModel(f, f, (self.width - 1) / 2.0, (self.height - 1) / 2.0,
                           self.width, self.height)


@dataclass
class SceneObject:
    x: float      # world x of the front face at the target time
    y: float      # lateral center
    width: float
    height: float
    speed: float  # along world x
    albedo: tuple
    class_label: str


@dataclass
class SyntheticScene:
    cam: CameraModel
    cam_from_ego: PoseSE3
    objects: list
    boxes: list
    depth: np.ndarray            # true target depth (H, W)
    instance: np.ndarray         # object index per pixel, -1 for background
    target: np.ndarray           # (H, W, 3)
    sources: list                # source images
    source_poses: list           # target camera -> source camera
    gt_translation_norms: list
    target_time: float
    target_pose: PoseSE3         # world_from_ego at target time
    sweeps: list
    gt: GroundTruthSamples
    seed: int
    config: SynthConfig = field(default_factory=SynthConfig)

    @property
    def source_times(self) -> list:
        return [-self.config.camera_dt, self.config.camera_dt]

    @property
    def n_radar(self) -> int:
        return sum(len(s) for s in self.sweeps)


def cam_from_ego(cam_height: float) -> PoseSE3:
    return PoseSE3(_CAM_R, -_CAM_R @ np.array([0.0, 0.0, cam_height]))


def _ego_pose(cfg: SynthConfig, t: float) -> PoseSE3:
    return PoseSE3.from_translation([cfg.ego_speed * t, 0.0, 0.0])


def _to_f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _texture_params(seed: int) -> np.ndarray:
    return _rng(seed, _ENT_TEXTURE).uniform(0, 2 * np.pi, size=(2, 3, 2))


def _wall_color(y, z, ph):
    return np.stack([0.5 + 0.2 * np.sin(0.35 * y + ph[0, c, 0]) + 0.1 * np.cos(0.5 * z + ph[0, c, 1])
                     for c in range(3)], axis=-1)


def _ground_color(x, y, ph):
    return np.stack([0.35 + 0.12 * np.sin(0.5 * y + ph[1, c, 0]) + 0.06 * np.sin(0.05 * x + ph[1, c, 1])
                     for c in range(3)], axis=-1)


def render(cfg: SynthConfig, objects, t: float, seed: int, cam_pose: PoseSE3 | None = None):
    """Ray-cast the scene at time ``t``: returns ``(image, depth, instance)``."""
    cam = cfg.camera
    world_from_cam = cam_pose or compose(_ego_pose(cfg, t), invert(cam_from_ego(cfg.cam_height)))
    v, u = np.mgrid[0:cam.height, 0:cam.width].astype(np.float64)
    rays = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    d = rays @ world_from_cam.rotation.T
    o = world_from_cam.translation
    ph = _texture_params(seed)
    best = np.full(u.shape, np.inf)
    inst = np.full(u.shape, -1, dtype=np.int64)
    img = np.zeros(u.shape + (3,))
    with np.errstate(divide="ignore", invalid="ignore"):
        tw = np.where(d[..., 0] > 0, (cfg.wall_distance - o[0]) / d[..., 0], np.inf)
        p = o + tw[..., None] * d
        hit = np.isfinite(tw) & (tw > 0)
        best = np.where(hit, tw, best)
        img = np.where(hit[..., None], _wall_color(p[..., 1], p[..., 2], ph), img)

        tg = np.where(d[..., 2] < 0, -o[2] / d[..., 2], np.inf)
        p = o + tg[..., None] * d
        hit = (tg > 0) & (tg < best)
        best = np.where(hit, tg, best)
        img = np.where(hit[..., None], _ground_color(p[..., 0], p[..., 1], ph), img)

        for i, ob in enumerate(objects):
            xi = ob.x + ob.speed * t
            to = np.where(d[..., 0] > 0, (xi - o[0]) / d[..., 0], np.inf)
            p = o + to[..., None] * d
            hit = ((to > 0) & (to < best) & (np.abs(p[..., 1] - ob.y) <= ob.width / 2)
                   & (p[..., 2] >= 0) & (p[..., 2] <= ob.height))
            best = np.where(hit, to, best)
            inst[hit] = i
            img[hit] = ob.albedo
    best[~np.isfinite(best)] = cfg.wall_distance
    return _to_f32(np.clip(img, 0, 1)), _to_f32(best), inst


def _box2d(cfg: SynthConfig, ob: SceneObject, cam_from_world: PoseSE3) -> BoundingBox2D:
    cam = cfg.camera
    corners = np.array([[ob.x, ob.y + sy * ob.width / 2, z] for sy in (-1, 1) for z in (0.0, ob.height)])
    pc = cam_from_world.apply(corners)
    u = cam.fx * pc[:, 0] / pc[:, 2] + cam.cx
    v = cam.fy * pc[:, 1] / pc[:, 2] + cam.cy
    return BoundingBox2D(float(u.min()), float(v.min()), float(u.max()), float(v.max()), ob.class_label)


def _layout(cfg: SynthConfig, seed: int, cam_from_world: PoseSE3):
    cam = cfg.camera
    objects, boxes = [], []
    rng = _rng(seed, _ENT_LAYOUT)
    for _ in range(cfg.n_boxes):
        for _attempt in range(200):
            x = rng.uniform(*cfg.depth_range)
            depth = x  # cam at world x = 0 at target time
            half_fov = (cam.width / 2 - 4) / cam.fx * depth
            w = rng.uniform(*cfg.box_width_range)
            h = rng.uniform(*cfg.box_height_range)
            if half_fov - w / 2 <= 0:
                continue
            y = rng.uniform(-(half_fov - w / 2), half_fov - w / 2)
            speed = rng.uniform(*cfg.box_speed_range)
            albedo = tuple(float(np.float32(a)) for a in rng.uniform(0.05, 0.95, 3))
            ob = SceneObject(float(x), float(y), float(w), float(h), float(speed), albedo, cfg.class_label)
            b = _box2d(cfg, ob, cam_from_world)
            inside = b.u_min >= 0 and b.v_min >= 0 and b.u_max <= cam.width - 1 and b.v_max <= cam.height - 1
            g = cfg.min_box_gap_px
            clear = all(b.u_min > o.u_max + g or b.u_max < o.u_min - g
                        or b.v_min > o.v_max + g or b.v_max < o.v_min - g for o in boxes)
            if inside and clear:
                objects.append(ob)
                boxes.append(b)
                break
    return objects, boxes


def _point_in_any_box(u, v, boxes) -> bool:
    return any(b.contains(u, v) for b in boxes)


def _sweep(cfg: SynthConfig, seed: int, k: int, t: float, objects, boxes, id0: int) -> RadarSweep:
    """Radar capture at time ``t``.

    Clutter is placed relative to the target-time camera (ghosts on the ray
    through the true return, see-through points on the wall behind it) and
    then carried back to capture time, so accumulation maps each point to
    an exactly known target-frame position.
    """
    cam = cfg.camera
    ego_inv = invert(_ego_pose(cfg, t))
    c_e = cam_from_ego(cfg.cam_height)
    e_c = invert(c_e)
    kk = k + 64
    pos, dop, lab = [], [], []
    for i, ob in enumerate(objects):
        rng = _rng(seed, _ENT_RETURNS, kk, i)
        n = int(rng.integers(cfg.returns_per_box[0], cfg.returns_per_box[1] + 1))
        for r in range(n):
            y = ob.y + rng.uniform(-0.45, 0.45) * ob.width
            p_target = np.array([ob.x, y, cfg.radar_height])  # world == target ego frame
            vel = np.array([ob.speed, 0.0, 0.0])
            u_mp, u_st, off = rng.uniform(), rng.uniform(), rng.uniform(*cfg.ghost_offset_range)
            label = LABEL_OBJECT
            pc = c_e.apply(p_target)
            if r > 0 and u_mp < cfg.p_multipath:
                label = LABEL_MULTIPATH
                p_target = e_c.apply(pc * (pc[2] + off) / pc[2])
            elif r > 0 and u_st < cfg.p_see_through and cfg.wall_distance - ob.x >= 3.0 + 1e-9:
                label = LABEL_SEE_THROUGH
                p_target = e_c.apply(pc * cfg.wall_distance / pc[2])
                vel = np.zeros(3)
            pos.append(ego_inv.apply(p_target + vel * t))
            dop.append(vel[:2])
            lab.append(label)
    rng = _rng(seed, _ENT_BACKGROUND, kk)
    half = (cam.width / 2) / cam.fx * cfg.wall_distance
    for _ in range(cfg.n_background):
        for _attempt in range(50):
            p_world = np.array([cfg.wall_distance, rng.uniform(-half, half), cfg.radar_height])
            uu, vv, _, ok = project_points(c_e.apply(p_world)[None], cam)
            # background must not fall in any target-time box
            if ok[0] and not _point_in_any_box(pixel_index(uu[0]), pixel_index(vv[0]), boxes):
                pos.append(ego_inv.apply(p_world))
                dop.append((0.0, 0.0))
                lab.append(LABEL_BACKGROUND)
                break
    n = len(pos)
    return RadarSweep(np.array(pos).reshape(-1, 3), np.array(dop).reshape(-1, 2), t, _ego_pose(cfg, t),
                      np.array(lab, dtype=np.int64), np.arange(id0, id0 + n, dtype=np.int64))


def generate(seed: int, config: SynthConfig | None = None, **overrides) -> SyntheticScene:
    """Build a full scene: layout, rendered views, radar sweeps and LiDAR-like samples."""
    cfg = replace(config or SynthConfig(), **overrides)
    cam = cfg.camera
    c_e = cam_from_ego(cfg.cam_height)
    target_pose = _ego_pose(cfg, 0.0)
    world_from_cam_t = compose(target_pose, invert(c_e))
    objects, boxes = _layout(cfg, seed, invert(world_from_cam_t))

    target, depth, instance = render(cfg, objects, 0.0, seed)
    sources, poses, norms = [], [], []
    for dt in (-cfg.camera_dt, cfg.camera_dt):
        img, _, _ = render(cfg, objects, dt, seed)
        world_from_cam_s = compose(_ego_pose(cfg, dt), invert(c_e))
        pose = compose(invert(world_from_cam_s), world_from_cam_t)
        sources.append(img)
        poses.append(pose)
        norms.append(float(np.linalg.norm(pose.translation)))

    sweeps, next_id = [], 0
    for k in range(-cfg.sweeps_past, cfg.sweeps_future + 1):
        sw = _sweep(cfg, seed, k, k * cfg.radar_dt, objects, boxes, next_id)
        next_id += len(sw)
        sweeps.append(sw)

    rng = _rng(seed, _ENT_GT)
    rows = rng.integers(0, cam.height, cfg.n_gt_samples)
    cols = rng.integers(0, cam.width, cfg.n_gt_samples)
    labels = np.array([objects[i].class_label if i >= 0 else "other" for i in instance[rows, cols]],
                      dtype=object)
    gt = GroundTruthSamples(cols.astype(float), rows.astype(float), depth[rows, cols], labels)

    return SyntheticScene(cam, c_e, objects, boxes, depth, instance, target, sources, poses, norms,
                          0.0, target_pose, sweeps, gt, seed, cfg)


def oracle_filter(scene: SyntheticScene) -> set[int]:
    """Ids of the radar points a perfect filter keeps: on-object, non-clutter returns."""
    keep = set()
    for sw in scene.sweeps:
        keep.update(sw.ids[sw.labels == LABEL_OBJECT].tolist())
    return keep


def plane_pair(cam: CameraModel, depth: float, translation, seed: int = 0):
    """Textured fronto-parallel plane seen from two camera positions.

    Returns ``(target, source, depth_raster, pose)`` where ``pose`` maps
    target-camera points into the source camera (pure translation).
    """
    ph = _rng(seed, _ENT_TEXTURE, 7).uniform(0, 2 * np.pi, size=(3, 2))
    t = np.asarray(translation, dtype=float)

    def view(offset, d):
        v, u = np.mgrid[0:cam.height, 0:cam.width].astype(np.float64)
        x = (u - cam.cx) / cam.fx * d - offset[0]
        y = (v - cam.cy) / cam.fy * d - offset[1]
        return np.stack([0.5 + 0.25 * np.sin(0.9 * x + ph[c, 0]) * np.cos(0.7 * y + ph[c, 1])
                         for c in range(3)], axis=-1)

    # a source pixel sees X_s = X_t + t, i.e. target-frame plane point X_s - t
    target = view(np.zeros(3), depth)
    source = view(t, depth + t[2])
    return target, source, np.full(cam.shape, float(depth)), PoseSE3.from_translation(t)
