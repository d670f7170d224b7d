"""Depth evaluation against sparse ground-truth samples, overall and per class."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import pixel_index

METRIC_NAMES = ("AbsRel", "SqRel", "RMSE", "RMSElog", "δ1", "δ2", "δ3")


class NoSamplesError(ValueError):
    """No ground-truth samples remain after filtering."""


@dataclass
class GroundTruthSamples:
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        self.v = np.asarray(self.v, dtype=float).reshape(-1)
        self.depth = np.asarray(self.depth, dtype=float).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=object).reshape(-1)
        n = len(self.u)
        if not (len(self.v) == len(self.depth) == len(self.labels) == n):
            raise ValueError("ground-truth sample arrays differ in length")

    def __len__(self):
        return len(self.u)

    @classmethod
    def from_entries(cls, entries: Iterable[tuple]) -> "GroundTruthSamples":
        entries = list(entries)
        if not entries:
            return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, dtype=object))
        u, v, d, c = zip(*entries)
        return cls(np.array(u), np.array(v), np.array(d), np.array(c, dtype=object))

    def to_records(self) -> list[dict]:
        return [{"u": float(a), "v": float(b), "depth": float(d), "class_label": str(c)}
                for a, b, d, c in zip(self.u, self.v, self.depth, self.labels)]

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "GroundTruthSamples":
        return cls.from_entries((r["u"], r["v"], r["depth"], r.get("class_label", "other"))
                                for r in records)


@dataclass
class MetricReport:
    AbsRel: float
    SqRel: float
    RMSE: float
    RMSElog: float
    d1: float  # percentages
    d2: float
    d3: float
    count: int
    median_scale: float | None = None
    per_class: dict = field(default_factory=dict)

    def values(self) -> tuple:
        return (self.AbsRel, self.SqRel, self.RMSE, self.RMSElog, self.d1, self.d2, self.d3)

    def to_table(self) -> str:
        """Key-value table; per-class rows carry an ``_<class>`` suffix."""
        lines = [f"{k} = {v!r}" for k, v in zip(METRIC_NAMES, self.values())]
        lines.append(f"count = {self.count}")
        if self.median_scale is not None:
            lines.append(f"median_scale = {self.median_scale!r}")
        for cls, rep in self.per_class.items():
            if rep is None:
                lines.append(f"AbsRel_{cls} = no samples")
                continue
            lines += [f"{k}_{cls} = {v!r}" for k, v in zip(METRIC_NAMES, rep.values())]
            lines.append(f"count_{cls} = {rep.count}")
        return "\n".join(lines) + "\n"


def compute_errors(gt: np.ndarray, pred: np.ndarray) -> tuple:
    thresh = np.maximum(gt / pred, pred / gt)
    d1 = 100.0 * (thresh < 1.25).mean()
    d2 = 100.0 * (thresh < 1.25 ** 2).mean()
    d3 = 100.0 * (thresh < 1.25 ** 3).mean()
    err = pred - gt
    abs_rel = np.mean(np.abs(err) / gt)
    sq_rel = np.mean(err ** 2 / gt)
    rmse = np.sqrt(np.mean(err ** 2))
    rmse_log = np.sqrt(np.mean((np.log(pred) - np.log(gt)) ** 2))
    return float(abs_rel), float(sq_rel), float(rmse), float(rmse_log), float(d1), float(d2), float(d3)


def sample_prediction(pred: np.ndarray, gt: GroundTruthSamples) -> np.ndarray:
    rows = np.clip(pixel_index(gt.v), 0, pred.shape[0] - 1)
    cols = np.clip(pixel_index(gt.u), 0, pred.shape[1] - 1)
    return np.asarray(pred, dtype=np.float64)[rows, cols]


def _select(gt: GroundTruthSamples, min_depth, max_depth, class_filter):
    keep = (gt.depth >= min_depth) & (gt.depth <= max_depth)
    if class_filter is not None:
        classes = {class_filter} if isinstance(class_filter, str) else set(class_filter)
        keep &= np.array([c in classes for c in gt.labels], dtype=bool)
    return keep


def evaluate(pred: np.ndarray, gt: GroundTruthSamples, max_depth: float = 80.0,
             class_filter=None, median_scaling: bool = False, min_depth: float = 0.1,
             classes: Sequence[str] = ()) -> MetricReport:
    """Standard depth errors at the ground-truth sample locations.

    Samples outside ``[min_depth, max_depth]`` are ignored; predictions are
    optionally median-scaled, then clamped to the same range.  ``classes``
    adds a per-class sub-report for each named label.
    """
    pred_s = sample_prediction(pred, gt)
    keep = _select(gt, min_depth, max_depth, class_filter)
    if not keep.any():
        raise NoSamplesError("no ground-truth samples after filtering")
    scale = None
    if median_scaling:
        scale = float(np.median(gt.depth[keep]) / np.median(pred_s[keep]))
        pred_s = pred_s * scale
    pred_s = np.clip(pred_s, min_depth, max_depth)
    report = MetricReport(*compute_errors(gt.depth[keep], pred_s[keep]), count=int(keep.sum()),
                          median_scale=scale)
    for cls in classes:
        k = keep & np.array([c == cls for c in gt.labels], dtype=bool)
        report.per_class[cls] = (MetricReport(*compute_errors(gt.depth[k], pred_s[k]), count=int(k.sum()))
                                 if k.any() else None)
    return report


def evaluate_frames(frames: Sequence[tuple[np.ndarray, GroundTruthSamples]], pooled: bool = True,
                    **kwargs) -> MetricReport:
    """Evaluate several frames.

    ``pooled`` concatenates all samples; otherwise metrics are computed per
    frame and averaged with equal frame weight.  Median scaling, when on, is
    always per frame.
    """
    if not frames:
        raise NoSamplesError("no frames to evaluate")
    if not pooled:
        reps = [evaluate(p, g, **kwargs) for p, g in frames]
        mean = np.mean([r.values() for r in reps], axis=0)
        return MetricReport(*map(float, mean), count=sum(r.count for r in reps))
    classes = kwargs.pop("classes", ())
    median_scaling = kwargs.pop("median_scaling", False)
    max_depth = kwargs.get("max_depth", 80.0)
    min_depth = kwargs.get("min_depth", 0.1)
    class_filter = kwargs.get("class_filter")
    preds, gts, labels = [], [], []
    for pred, gt in frames:
        p = sample_prediction(pred, gt)
        keep = _select(gt, min_depth, max_depth, class_filter)
        if median_scaling and keep.any():
            p = p * (np.median(gt.depth[keep]) / np.median(p[keep]))
        preds.append(p[keep])
        gts.append(gt.depth[keep])
        labels.append(gt.labels[keep])
    pooled_pred = np.concatenate(preds)
    if len(pooled_pred) == 0:
        raise NoSamplesError("no ground-truth samples after filtering")
    gt_all = GroundTruthSamples(np.arange(len(pooled_pred), dtype=float), np.zeros(len(pooled_pred)),
                                np.concatenate(gts), np.concatenate(labels))
    return evaluate(pooled_pred[None, :], gt_all, max_depth=max_depth, min_depth=min_depth,
                    classes=classes)
