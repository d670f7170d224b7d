"""Radar accumulation, projection and filtering.

Training side: accumulate -> project_sweep -> clutter_removal ->
object_focused_filter -> duplicate_vertical.  Inference side:
accumulate -> project_sweep -> inference_filter -> rasterize_input.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
from .geometry import CameraModel, PoseSE3, compose, invert, pixel_index, project_points

logger = logging.getLogger(__name__)

MAX_DOPPLER = 100.0

# label values carried by sweeps generated with known provenance
LABEL_OBJECT = 0
LABEL_MULTIPATH = 1
LABEL_SEE_THROUGH = 2
LABEL_BACKGROUND = 3


@dataclass(frozen=True)
class RadarPoint:
    position: tuple
    doppler: tuple
    timestamp: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.position)) or len(self.position) != 3:
            raise ValueError("radar position must be a finite 3-vector")
        if len(self.doppler) != 2 or not np.hypot(*self.doppler) < MAX_DOPPLER:
            raise ValueError("doppler must be a 2-vector with magnitude < 100 m/s")


@dataclass
class RadarSweep:
    """One radar capture, stored column-wise.

    ``positions`` (N, 3) are in the ego frame at capture time, ``doppler``
    (N, 2) holds motion-compensated (v_x, v_y) in the same frame.  ``labels``
    and ``ids`` are optional provenance used by synthetic scenes.
    """

    positions: np.ndarray
    doppler: np.ndarray
    timestamp: float
    ego_pose: PoseSE3 = field(default_factory=PoseSE3.identity)
    labels: np.ndarray | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.doppler = np.asarray(self.doppler, dtype=float).reshape(-1, 2)
        n = len(self.positions)
        if len(self.doppler) != n:
            raise ValueError("positions and doppler lengths differ")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("radar positions must be finite")
        if n and np.max(np.hypot(self.doppler[:, 0], self.doppler[:, 1])) >= MAX_DOPPLER:
            raise ValueError("doppler magnitude must be < 100 m/s")
        self.labels = (np.zeros(n, dtype=np.int64) if self.labels is None
                       else np.asarray(self.labels, dtype=np.int64).reshape(-1))
        self.ids = (np.arange(n, dtype=np.int64) if self.ids is None
                    else np.asarray(self.ids, dtype=np.int64).reshape(-1))
        if len(self.labels) != n or len(self.ids) != n:
            raise ValueError("labels/ids lengths differ from positions")

    def __len__(self):
        return len(self.positions)

    @classmethod
    def from_points(cls, points: Sequence[RadarPoint], timestamp: float,
                    ego_pose: PoseSE3 | None = None) -> "RadarSweep":
        for p in points:
            if p.timestamp != timestamp:
                raise ValueError("all point timestamps must equal the sweep timestamp")
        pos = np.array([p.position for p in points], dtype=float).reshape(-1, 3)
        dop = np.array([p.doppler for p in points], dtype=float).reshape(-1, 2)
        return cls(pos, dop, timestamp, ego_pose or PoseSE3.identity())

    @property
    def points(self) -> list[RadarPoint]:
        return [RadarPoint(tuple(p), tuple(d), self.timestamp)
                for p, d in zip(self.positions, self.doppler)]


@dataclass(frozen=True)
class BoundingBox2D:
    u_min: float
    v_min: float
    u_max: float
    v_max: float
    class_label: str = "car"

    def __post_init__(self):
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise ValueError(f"degenerate box {self}")

    @property
    def width(self) -> float:
        return self.u_max - self.u_min

    @property
    def height(self) -> float:
        return self.v_max - self.v_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return (u >= self.u_min) & (u <= self.u_max) & (v >= self.v_min) & (v <= self.v_max)

    def intersects_raster(self, cam: CameraModel) -> bool:
        return (self.u_max >= -0.5 and self.u_min < cam.width - 0.5
                and self.v_max >= -0.5 and self.v_min < cam.height - 0.5)

    def pixel_bounds(self, shape) -> tuple[int, int, int, int]:
        """Inclusive (col0, row0, col1, row1) of pixel centers inside the box, clipped."""
        h, w = shape
        c0 = max(int(np.ceil(self.u_min)), 0)
        r0 = max(int(np.ceil(self.v_min)), 0)
        c1 = min(int(np.floor(self.u_max)), w - 1)
        r1 = min(int(np.floor(self.v_max)), h - 1)
        return c0, r0, c1, r1

    def to_dict(self) -> dict:
        return {"u_min": self.u_min, "v_min": self.v_min, "u_max": self.u_max,
                "v_max": self.v_max, "class_label": self.class_label}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox2D":
        return cls(float(d["u_min"]), float(d["v_min"]), float(d["u_max"]),
                   float(d["v_max"]), str(d.get("class_label", "car")))


@dataclass
class ProjectedRadar:
    """Radar entries in image space.

    ``source`` is the id of the originating radar point; ``box`` the index of
    the bounding box an entry was associated with (-1 when unassigned).
    """

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    source: np.ndarray
    box: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        self.v = np.asarray(self.v, dtype=float).reshape(-1)
        self.depth = np.asarray(self.depth, dtype=float).reshape(-1)
        self.source = np.asarray(self.source, dtype=np.int64).reshape(-1)
        n = len(self.u)
        if self.box is None:
            self.box = np.full(n, -1, dtype=np.int64)
        self.box = np.asarray(self.box, dtype=np.int64).reshape(-1)
        if self.labels is None:
            self.labels = np.zeros(n, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if not all(len(a) == n for a in (self.v, self.depth, self.source, self.box, self.labels)):
            raise ValueError("ProjectedRadar arrays must have equal length")

    def __len__(self):
        return len(self.u)

    @classmethod
    def empty(cls) -> "ProjectedRadar":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_entries(cls, entries) -> "ProjectedRadar":
        """Build from ``(u, v, depth, source)`` tuples."""
        arr = np.array(list(entries), dtype=float).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3].astype(np.int64))

    def subset(self, keep) -> "ProjectedRadar":
        keep = np.asarray(keep)
        return ProjectedRadar(self.u[keep], self.v[keep], self.depth[keep], self.source[keep],
                              self.box[keep], self.labels[keep])

    def entries(self) -> list[tuple]:
        return list(zip(self.u.tolist(), self.v.tolist(), self.depth.tolist(), self.source.tolist()))

    @property
    def cols(self) -> np.ndarray:
        return pixel_index(self.u)

    @property
    def rows(self) -> np.ndarray:
        return pixel_index(self.v)


# -- accumulation -----------------------------------------------------------

def accumulate(sweeps: Sequence[RadarSweep], target_time: float, target_pose: PoseSE3,
               allow_future: bool = False, eps: float = 1e-6) -> RadarSweep:
    """Map every sweep into the target ego frame at ``target_time``.

    Each point is moved by the ego displacement between its capture pose and
    ``target_pose`` and advanced along its doppler velocity for the elapsed
    time; height receives no velocity term.  Sweeps captured after
    ``target_time`` are rejected unless ``allow_future`` is set.
    """
    if not sweeps:
        raise ValueError("accumulate needs at least one sweep")
    target_inv = invert(target_pose)
    positions, doppler, labels, ids = [], [], [], []
    for sweep in sweeps:
        dt = target_time - sweep.timestamp
        if dt < -eps and not allow_future:
            raise ValueError(
                f"sweep at t={sweep.timestamp} is after target time {target_time}")
        rel = compose(target_inv, sweep.ego_pose)
        vel = np.zeros((len(sweep), 3))
        vel[:, :2] = sweep.doppler
        vel_t = vel @ rel.rotation.T
        positions.append(rel.apply(sweep.positions) + vel_t * dt)
        doppler.append(vel_t[:, :2])
        labels.append(sweep.labels)
        ids.append(sweep.ids)
    return RadarSweep(np.concatenate(positions), np.concatenate(doppler), target_time,
                      target_pose, np.concatenate(labels), np.concatenate(ids))


def select_window(sweeps: Sequence[RadarSweep], target_time: float, past: int = 3,
                  future: int = 0, eps: float = 1e-6) -> list[RadarSweep]:
    """Latest sweep at or before ``target_time`` with ``past`` earlier ones,
    plus the first ``future`` sweeps after it, in time order."""
    ordered = sorted(sweeps, key=lambda s: s.timestamp)
    before = [s for s in ordered if s.timestamp <= target_time + eps]
    after = [s for s in ordered if s.timestamp > target_time + eps]
    return before[-(past + 1):] + after[:future]


# -- projection -------------------------------------------------------------

def project_sweep(sweep: RadarSweep, cam: CameraModel, cam_from_ego: PoseSE3) -> ProjectedRadar:
    """Project into the image; each kept point is snapped to a single pixel."""
    if len(sweep) == 0:
        return ProjectedRadar.empty()
    pc = cam_from_ego.apply(sweep.positions)
    u, v, z, ok = project_points(pc, cam)
    return ProjectedRadar(pixel_index(u[ok]).astype(float), pixel_index(v[ok]).astype(float),
                          z[ok], sweep.ids[ok], labels=sweep.labels[ok])


# -- box-based filtering ----------------------------------------------------

def containing_boxes(proj: ProjectedRadar, boxes: Sequence[BoundingBox2D]) -> np.ndarray:
    """Boolean (N, B) containment matrix."""
    if not boxes:
        return np.zeros((len(proj), 0), dtype=bool)
    return np.stack([b.contains(proj.u, proj.v) for b in boxes], axis=1)


def assign_boxes(proj: ProjectedRadar, boxes: Sequence[BoundingBox2D]) -> np.ndarray:
    """Index of the smallest-area box containing each entry, -1 if none.

    Equal areas resolve to the lower box index.
    """
    inside = containing_boxes(proj, boxes)
    if inside.shape[1] == 0:
        return np.full(len(proj), -1, dtype=np.int64)
    areas = np.array([b.area for b in boxes])
    cost = np.where(inside, areas[None, :], np.inf)
    idx = np.argmin(cost, axis=1)
    idx[~inside.any(axis=1)] = -1
    return idx.astype(np.int64)


def clutter_removal(proj: ProjectedRadar, boxes: Sequence[BoundingBox2D],
                    beta: float = 2.0) -> ProjectedRadar:
    """Keep entries nearer than (box minimum depth + beta); drop background."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    assigned = assign_boxes(proj, boxes)
    keep = np.zeros(len(proj), dtype=bool)
    for b in np.unique(assigned[assigned >= 0]):
        members = assigned == b
        d_min = proj.depth[members].min()
        keep |= members & (proj.depth < d_min + beta)
    out = proj.subset(keep)
    out.box = assigned[keep]
    return out


def object_focused_filter(proj: ProjectedRadar, boxes: Sequence[BoundingBox2D],
                          top_fraction: float = 0.5, side_fraction: float = 0.2) -> ProjectedRadar:
    """Drop entries in a box's upper half, its outer side margins, or in box overlaps."""
    inside = containing_boxes(proj, boxes)
    if inside.shape[1] == 0:
        return proj.subset(np.zeros(len(proj), dtype=bool))
    single = inside.sum(axis=1) == 1
    keep = np.zeros(len(proj), dtype=bool)
    for b, box in enumerate(boxes):
        sel = single & inside[:, b]
        v_cut = box.v_min + top_fraction * box.height
        margin = side_fraction * box.width
        ok = ((proj.v >= v_cut)
              & (proj.u >= box.u_min + margin) & (proj.u <= box.u_max - margin))
        keep |= sel & ok
    out = proj.subset(keep)
    out.box = np.argmax(inside[keep], axis=1).astype(np.int64)
    return out


def duplicate_vertical(proj: ProjectedRadar, boxes: Sequence[BoundingBox2D]) -> ProjectedRadar:
    """Replace each entry by copies at the middle and lower-third rows of its box."""
    box_idx = np.where(proj.box >= 0, proj.box, assign_boxes(proj, boxes))
    keep = box_idx >= 0
    if not keep.all():
        logger.debug("duplicate_vertical: %d entries without a box dropped", int((~keep).sum()))
    p = proj.subset(keep)
    box_idx = box_idx[keep]
    if len(p) == 0:
        return ProjectedRadar.empty()
    v_min = np.array([boxes[b].v_min for b in box_idx])
    h = np.array([boxes[b].height for b in box_idx])
    v_mid = v_min + h / 2.0
    v_low = v_min + 2.0 * h / 3.0
    # interleave so copies of entry i sit at 2i and 2i+1
    v_new = np.stack([v_mid, v_low], axis=1).reshape(-1)
    rep = np.repeat(np.arange(len(p)), 2)
    return ProjectedRadar(p.u[rep], v_new, p.depth[rep], p.source[rep], box_idx[rep], p.labels[rep])


# -- inference-side filtering -----------------------------------------------

def window_starts(extent: int, window: int, stride: int) -> np.ndarray:
    """Offsets of a sliding window over ``extent`` pixels; the last window is flush."""
    window = min(window, extent)
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] != extent - window:
        starts.append(extent - window)
    return np.array(starts, dtype=np.int64)


def inference_filter(proj: ProjectedRadar, shape: tuple[int, int], window_h: int = 320,
                     window_w: int = 8, stride: int = 3, beta: float = 2.0) -> ProjectedRadar:
    """Box-free min-pooling: an entry survives only if it is within ``beta`` of
    the minimum depth of every window that covers it."""
    if len(proj) == 0:
        return proj
    h, w = shape
    xs = window_starts(w, window_w, stride)
    ys = window_starts(h, window_h, stride)
    keep = _backend.kernels.window_min_filter(
        proj.cols, proj.rows, proj.depth, xs, ys, min(window_w, w), min(window_h, h), float(beta))
    return proj.subset(keep.astype(bool))


def rasterize_input(proj: ProjectedRadar, cam: CameraModel) -> np.ndarray:
    """Depth at occupied pixels, 0 elsewhere; collisions keep the nearest depth."""
    out = np.full(cam.shape, np.inf)
    if len(proj):
        np.minimum.at(out, (proj.rows, proj.cols), proj.depth)
    out[np.isinf(out)] = 0.0
    return out
