"""Raster files (PFM, PPM), scene files and manifests.

A scene is a directory holding ``scene.json`` plus the rasters it
references.  Float rasters are PFM: ``Pf`` (one channel) or ``PF`` (three),
little-endian with scale ``-1.0``, rows stored bottom-up.
"""
from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, PoseSE3
from .metrics import GroundTruthSamples
from .radar import BoundingBox2D, RadarSweep

SCENE_FILE = "scene.json"
SCENE_VERSION = 1
SPLITS = ("train", "val", "test")
CONDITIONS = ("clear", "rain", "night")


class SceneValidationError(ValueError):
    """A scene or manifest document is malformed; ``field`` names the culprit."""

    def __init__(self, field: str, problem: str):
        super().__init__(f"{field}: {problem}")
        self.field = field


# -- PFM / PPM --------------------------------------------------------------

def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    elif data.ndim == 2:
        header = b"Pf"
    else:
        raise ValueError(f"PFM holds (H, W) or (H, W, 3) rasters, got {data.shape}")
    h, w = data.shape[:2]
    body = np.ascontiguousarray(data[::-1], dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n" + body)


def _header_tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated tokens; returns (tokens, offset)."""
    tokens, pos = [], 0
    while len(tokens) < count:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(buf, pos)
        if m is None:
            raise ValueError("truncated header")
        tokens.append(m.group(2).decode("ascii"))
        pos = m.end()
    return tokens, pos + 1  # single whitespace byte ends the header


def read_pfm(path) -> np.ndarray:
    """Read a PFM raster as float64, top row first."""
    with open(path, "rb") as f:
        buf = f.read()
    (kind, w, h, scale), pos = _header_tokens(buf, 4)
    if kind not in ("Pf", "PF"):
        raise ValueError(f"{path}: not a PFM file (magic {kind!r})")
    w, h, scale = int(w), int(h), float(scale)
    channels = 3 if kind == "PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    data = np.frombuffer(buf, dtype=dtype, count=n, offset=pos)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float64)


def write_ppm(path, image: np.ndarray) -> None:
    """8-bit binary PPM from an (H, W, 3) image in [0, 1]."""
    img = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def read_ppm(path) -> np.ndarray:
    """Binary PPM (P6) as float64 in [0, 1]."""
    with open(path, "rb") as f:
        buf = f.read()
    (kind, w, h, maxval), pos = _header_tokens(buf, 4)
    if kind != "P6":
        raise ValueError(f"{path}: only binary PPM (P6) is supported")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = np.uint8 if maxval < 256 else ">u2"
    data = np.frombuffer(buf, dtype=dtype, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).astype(np.float64) / maxval


def read_raster(path) -> np.ndarray:
    return read_ppm(path) if str(path).lower().endswith(".ppm") else read_pfm(path)


# -- scenes -----------------------------------------------------------------

@dataclass
class Scene:
    cam: CameraModel
    cam_from_ego: PoseSE3
    target: np.ndarray
    target_time: float
    target_pose: PoseSE3
    sources: list
    source_poses: list          # target camera -> source camera
    gt_translation_norms: list
    source_times: list
    boxes: list
    sweeps: list
    depth: np.ndarray | None = None
    gt: GroundTruthSamples | None = None
    meta: dict = field(default_factory=dict)


def _sweep_to_dict(sw: RadarSweep) -> dict:
    return {
        "timestamp": float(sw.timestamp),
        "ego_pose": sw.ego_pose.to_row_major(),
        "points": [{"position": p.tolist(), "doppler": d.tolist(), "label": int(lab), "id": int(i)}
                   for p, d, lab, i in zip(sw.positions, sw.doppler, sw.labels, sw.ids)],
    }


def save_scene(scene, directory) -> str:
    """Write ``scene`` (a :class:`Scene` or synthetic scene) into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    write_pfm(os.path.join(directory, "target.pfm"), scene.target)
    sources = []
    times = list(getattr(scene, "source_times", [None] * len(scene.sources)))
    for k, (img, pose, norm, t) in enumerate(zip(scene.sources, scene.source_poses,
                                                 scene.gt_translation_norms, times)):
        name = f"source_{k}.pfm"
        write_pfm(os.path.join(directory, name), img)
        sources.append({"image": name, "pose_from_target": pose.to_row_major(),
                        "gt_translation_norm": float(norm),
                        "timestamp": None if t is None else float(t)})
    doc = {
        "version": SCENE_VERSION,
        "camera": scene.cam.to_dict(),
        "cam_from_ego": scene.cam_from_ego.to_row_major(),
        "target": {"image": "target.pfm", "timestamp": float(scene.target_time),
                   "ego_pose": scene.target_pose.to_row_major()},
        "sources": sources,
        "boxes": [b.to_dict() for b in scene.boxes],
        "sweeps": [_sweep_to_dict(sw) for sw in scene.sweeps],
    }
    if getattr(scene, "depth", None) is not None:
        write_pfm(os.path.join(directory, "depth.pfm"), scene.depth)
        doc["depth"] = "depth.pfm"
    if getattr(scene, "gt", None) is not None:
        doc["gt_samples"] = scene.gt.to_records()
    meta = dict(getattr(scene, "meta", {}) or {})
    if hasattr(scene, "seed"):
        meta.setdefault("seed", int(scene.seed))
    if meta:
        doc["meta"] = meta
    path = os.path.join(directory, SCENE_FILE)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    return path


def _get(d, key, where, kind=None):
    if not isinstance(d, dict) or key not in d:
        raise SceneValidationError(f"{where}.{key}" if where else key, "missing")
    val = d[key]
    if kind is not None and not isinstance(val, kind):
        raise SceneValidationError(f"{where}.{key}" if where else key,
                                   f"expected {getattr(kind, '__name__', kind)}")
    return val


def _finite(val, where) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise SceneValidationError(where, f"expected a finite number, got {val!r}")
    return float(val)


def _numbers(vals, n, where) -> list:
    if not isinstance(vals, list) or len(vals) != n:
        raise SceneValidationError(where, f"expected {n} numbers")
    return [_finite(v, f"{where}[{i}]") for i, v in enumerate(vals)]


def parse_pose(vals, where) -> PoseSE3:
    nums = _numbers(vals, 12, where)
    try:
        return PoseSE3.from_row_major(nums)
    except ValueError as e:
        raise SceneValidationError(where, str(e)) from None


def _raster(directory, name, where, shape=None) -> np.ndarray:
    if not isinstance(name, str):
        raise SceneValidationError(where, "expected a file name")
    path = os.path.join(directory, name)
    if not os.path.isfile(path):
        raise SceneValidationError(where, f"raster {name!r} not found")
    try:
        data = read_raster(path)
    except (ValueError, OSError) as e:
        raise SceneValidationError(where, f"unreadable raster: {e}") from None
    if shape is not None and data.shape[:2] != shape:
        raise SceneValidationError(where, f"raster is {data.shape[:2]}, camera is {shape}")
    if not np.all(np.isfinite(data)):
        raise SceneValidationError(where, "raster contains non-finite values")
    return data


def load_scene(directory) -> Scene:
    """Read and validate a scene directory (or the path of its ``scene.json``)."""
    if os.path.isfile(directory):
        path, directory = directory, os.path.dirname(directory) or "."
    else:
        path = os.path.join(directory, SCENE_FILE)
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise SceneValidationError(SCENE_FILE, f"not found in {directory}") from None
    except json.JSONDecodeError as e:
        raise SceneValidationError(SCENE_FILE, f"invalid JSON ({e})") from None
    if _get(doc, "version", "") != SCENE_VERSION:
        raise SceneValidationError("version", f"unsupported version {doc['version']!r}")

    cam_d = _get(doc, "camera", "", dict)
    for k in ("fx", "fy", "cx", "cy"):
        _finite(_get(cam_d, k, "camera"), f"camera.{k}")
    for k in ("width", "height"):
        if not isinstance(_get(cam_d, k, "camera"), int):
            raise SceneValidationError(f"camera.{k}", "expected an integer")
    try:
        cam = CameraModel.from_dict(cam_d)
    except ValueError as e:
        raise SceneValidationError("camera", str(e)) from None
    shape = cam.shape
    cam_from_ego = parse_pose(_get(doc, "cam_from_ego", ""), "cam_from_ego")

    tgt = _get(doc, "target", "", dict)
    target = _raster(directory, _get(tgt, "image", "target"), "target.image", shape)
    target_time = _finite(_get(tgt, "timestamp", "target"), "target.timestamp")
    target_pose = parse_pose(_get(tgt, "ego_pose", "target"), "target.ego_pose")

    sources, poses, norms, times = [], [], [], []
    for k, s in enumerate(_get(doc, "sources", "", list)):
        where = f"sources[{k}]"
        sources.append(_raster(directory, _get(s, "image", where), f"{where}.image", shape))
        poses.append(parse_pose(_get(s, "pose_from_target", where), f"{where}.pose_from_target"))
        norm = _finite(_get(s, "gt_translation_norm", where), f"{where}.gt_translation_norm")
        if norm < 0:
            raise SceneValidationError(f"{where}.gt_translation_norm", "must be non-negative")
        norms.append(norm)
        t = s.get("timestamp")
        times.append(None if t is None else _finite(t, f"{where}.timestamp"))

    boxes = []
    for k, b in enumerate(_get(doc, "boxes", "", list)):
        where = f"boxes[{k}]"
        vals = [_finite(_get(b, key, where), f"{where}.{key}") for key in ("u_min", "v_min", "u_max", "v_max")]
        try:
            boxes.append(BoundingBox2D(*vals, str(b.get("class_label", "car"))))
        except ValueError as e:
            raise SceneValidationError(where, str(e)) from None

    sweeps = []
    for k, s in enumerate(_get(doc, "sweeps", "", list)):
        where = f"sweeps[{k}]"
        ts = _finite(_get(s, "timestamp", where), f"{where}.timestamp")
        pose = parse_pose(_get(s, "ego_pose", where), f"{where}.ego_pose")
        pts = _get(s, "points", where, list)
        pos = np.zeros((len(pts), 3))
        dop = np.zeros((len(pts), 2))
        lab = np.zeros(len(pts), dtype=np.int64)
        ids = np.zeros(len(pts), dtype=np.int64)
        for i, p in enumerate(pts):
            pw = f"{where}.points[{i}]"
            pos[i] = _numbers(_get(p, "position", pw), 3, f"{pw}.position")
            dop[i] = _numbers(_get(p, "doppler", pw), 2, f"{pw}.doppler")
            lab[i] = int(p.get("label", 0))
            ids[i] = int(p.get("id", i))
        try:
            sweeps.append(RadarSweep(pos, dop, ts, pose, lab, ids))
        except ValueError as e:
            raise SceneValidationError(where, str(e)) from None

    depth = None
    if "depth" in doc:
        depth = _raster(directory, doc["depth"], "depth", shape)
    gt = None
    if "gt_samples" in doc:
        recs = _get(doc, "gt_samples", "", list)
        for i, r in enumerate(recs):
            for key in ("u", "v", "depth"):
                _finite(_get(r, key, f"gt_samples[{i}]"), f"gt_samples[{i}].{key}")
        gt = GroundTruthSamples.from_records(recs)
    return Scene(cam, cam_from_ego, target, target_time, target_pose, sources, poses, norms, times,
                 boxes, sweeps, depth, gt, dict(doc.get("meta", {})))


def save_gt_samples(path, gt: GroundTruthSamples) -> None:
    with open(path, "w") as f:
        json.dump({"gt_samples": gt.to_records()}, f, indent=1)
        f.write("\n")


def load_gt_samples(path) -> GroundTruthSamples:
    """Ground-truth samples from a scene directory, scene.json, or samples file."""
    if os.path.isdir(path):
        path = os.path.join(path, SCENE_FILE)
    with open(path) as f:
        doc = json.load(f)
    recs = _get(doc, "gt_samples", "", list)
    for i, r in enumerate(recs):
        for key in ("u", "v", "depth"):
            _finite(_get(r, key, f"gt_samples[{i}]"), f"gt_samples[{i}].{key}")
    return GroundTruthSamples.from_records(recs)


# -- manifests --------------------------------------------------------------

@dataclass
class ManifestFrame:
    sequence: str
    timestamp: float
    scene: str
    split: str = "train"
    condition: str = "clear"


@dataclass
class Manifest:
    frames: list

    def __post_init__(self):
        last: dict = {}
        for k, fr in enumerate(self.frames):
            where = f"frames[{k}]"
            if fr.split not in SPLITS:
                raise SceneValidationError(f"{where}.split", f"must be one of {SPLITS}")
            if fr.condition not in CONDITIONS:
                raise SceneValidationError(f"{where}.condition", f"must be one of {CONDITIONS}")
            prev = last.get(fr.sequence)
            if prev is not None and not fr.timestamp > prev:
                raise SceneValidationError(f"{where}.timestamp",
                                           f"not after {prev} in sequence {fr.sequence!r}")
            last[fr.sequence] = fr.timestamp

    def select(self, split=None, condition=None) -> list:
        return [f for f in self.frames
                if (split is None or f.split == split) and (condition is None or f.condition == condition)]

    def to_dict(self) -> dict:
        return {"version": 1, "frames": [vars(f).copy() for f in self.frames]}

    @classmethod
    def from_dict(cls, doc: dict) -> "Manifest":
        frames = []
        for k, f in enumerate(_get(doc, "frames", "", list)):
            where = f"frames[{k}]"
            frames.append(ManifestFrame(str(_get(f, "sequence", where)),
                                        _finite(_get(f, "timestamp", where), f"{where}.timestamp"),
                                        str(_get(f, "scene", where)), str(f.get("split", "train")),
                                        str(f.get("condition", "clear"))))
        return cls(frames)


def save_manifest(path, manifest: Manifest) -> None:
    with open(path, "w") as f:
        json.dump(manifest.to_dict(), f, indent=1)
        f.write("\n")


def load_manifest(path) -> Manifest:
    with open(path) as f:
        return Manifest.from_dict(json.load(f))
