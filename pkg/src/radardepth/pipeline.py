"""End-to-end preparation of radar supervision and radar network input."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .association import BinaryAssociation, WeightRaster, bilateral_weights, binarize
from .config import Config
from .losses import (SupervisionPack, build_pseudo_gt, multiscale_losses, photometric_loss,
                     radar_loss, reconstruct_view, total_loss, velocity_loss)
from .radar import (ProjectedRadar, accumulate, assign_boxes, clutter_removal, duplicate_vertical,
                    inference_filter, object_focused_filter, project_sweep, rasterize_input,
                    select_window)


@dataclass
class PreparedFrame:
    entries: ProjectedRadar       # duplicated seeds driving the expansion
    weights: WeightRaster
    assoc: BinaryAssociation
    pack: SupervisionPack | None  # only when a prediction was given
    provenance: dict


def _boxes(scene, cfg: Config) -> list:
    if cfg.box_classes is None:
        return list(scene.boxes)
    return [b for b in scene.boxes if b.class_label in cfg.box_classes]


def accumulate_projected(scene, past: int, future: int) -> tuple:
    window = select_window(scene.sweeps, scene.target_time, past=past, future=future)
    if not window:
        return None, ProjectedRadar.empty(), 0
    acc = accumulate(window, scene.target_time, scene.target_pose, allow_future=future > 0)
    return acc, project_sweep(acc, scene.cam, scene.cam_from_ego), len(window)


def prepare_supervision(scene, cfg: Config | None = None,
                        prediction: np.ndarray | None = None) -> PreparedFrame:
    """Accumulate, filter, duplicate and expand radar into supervision regions.

    The provenance dict counts the entries surviving each stage; entries
    outside every box are reported as ``background`` and are not counted as
    clutter removals.
    """
    cfg = cfg or Config()
    boxes = _boxes(scene, cfg)
    acc, proj, n_sweeps = accumulate_projected(scene, cfg.train_sweeps_past, cfg.train_sweeps_future)
    in_box = assign_boxes(proj, boxes) >= 0
    cleaned = clutter_removal(proj, boxes, cfg.beta)
    focused = object_focused_filter(cleaned, boxes)
    seeds = duplicate_vertical(focused, boxes)
    weights = bilateral_weights(scene.target, seeds, boxes, sigma_r=cfg.sigma_r, c=cfg.sigma_scale)
    assoc = binarize(weights, cfg.gamma)
    pack = build_pseudo_gt(prediction, seeds, assoc) if prediction is not None else None
    mask = pack.mask if pack is not None else assoc.mask
    region = pack.region_id if pack is not None else assoc.region_id
    provenance = {
        "sweeps": n_sweeps,
        "accumulated": 0 if acc is None else len(acc),
        "projected": len(proj),
        "background": int((~in_box).sum()),
        "in_boxes": int(in_box.sum()),
        "clutter_removed": int(in_box.sum()) - len(cleaned),
        "after_clutter_removal": len(cleaned),
        "object_filter_removed": len(cleaned) - len(focused),
        "after_object_filter": len(focused),
        "seeds": len(seeds),
        "regions": int(len(np.unique(region[mask]))),
        "masked_pixels": int(mask.sum()),
    }
    return PreparedFrame(seeds, weights, assoc, pack, provenance)


def prepare_input(scene, cfg: Config | None = None) -> tuple[np.ndarray, ProjectedRadar, dict]:
    """Radar network input: past sweeps only, box-free window filter, rasterized."""
    cfg = cfg or Config()
    acc, proj, n_sweeps = accumulate_projected(scene, cfg.input_sweeps_past, 0)
    kept = inference_filter(proj, scene.cam.shape, cfg.window_h, cfg.window_w, cfg.window_stride,
                            cfg.beta)
    raster = rasterize_input(kept, scene.cam)
    occupied = int((raster > 0).sum())
    stats = {
        "sweeps": n_sweeps,
        "accumulated": 0 if acc is None else len(acc),
        "projected": len(proj),
        "kept": len(kept),
        "removed": len(proj) - len(kept),
        "occupied_pixels": occupied,
        "occupancy": occupied / raster.size,
    }
    return raster, kept, stats


def scene_losses(scene, predictions: Sequence[np.ndarray], poses=None, cfg: Config | None = None):
    """All loss components for depth predictions (finest first) and pose estimates.

    Returns ``(LossReport, maps)`` where ``maps`` holds per-pixel rasters of
    the finest scale.  Poses default to the scene's reference poses.
    """
    cfg = cfg or Config()
    poses = list(poses) if poses is not None else list(scene.source_poses)
    if len(poses) != len(scene.sources):
        raise ValueError(f"{len(poses)} poses given for {len(scene.sources)} source images")
    fine = np.asarray(predictions[0], dtype=np.float64)
    if fine.shape != scene.cam.shape:
        raise ValueError(f"prediction is {fine.shape}, scene is {scene.cam.shape}")
    for p in predictions:
        if not np.all(np.isfinite(p)) or np.any(np.asarray(p) <= 0):
            raise ValueError("predictions must be finite and positive")
    L_p, L_s = multiscale_losses(scene.target, scene.sources, predictions, poses, scene.cam, cfg.alpha)
    L_v = float(np.mean([velocity_loss(p, n) for p, n in zip(poses, scene.gt_translation_norms)])) \
        if poses else 0.0
    frame = prepare_supervision(scene, cfg, fine)
    L_r = radar_loss(fine, frame.pack, cfg.radar_normalize)
    report = total_loss(L_p, L_s, L_v, L_r, cfg.lambda_smooth, cfg.lambda_velocity, cfg.lambda_radar)

    warped = [reconstruct_view(s, fine, p, scene.cam) for s, p in zip(scene.sources, poses)]
    _, pe_min, automask = photometric_loss(scene.target, scene.sources, [r for r, _ in warped],
                                           [v for _, v in warped], cfg.alpha)
    radar_abs = np.where(frame.pack.mask, np.abs(fine - frame.pack.pseudo_gt), 0.0)
    maps = {
        "photometric": np.where(np.isfinite(pe_min), pe_min, 0.0),
        "automask": automask.astype(np.float64),
        "radar_mask": frame.pack.mask.astype(np.float64),
        "radar_abs": radar_abs,
        "pseudo_gt": frame.pack.pseudo_gt,
    }
    return report, maps
