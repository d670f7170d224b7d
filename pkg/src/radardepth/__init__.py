"""Radar weak supervision and radar input preparation for self-supervised monocular depth."""
from ._backend import BACKEND
from .association import BinaryAssociation, WeightRaster, adaptive_sigma, bilateral_weights, binarize
from .config import Config, load_config
from .geometry import (CameraModel, PoseSE3, backproject, compose, invert, pixel_index, project,
                       project_points, transform)
from .losses import (LossReport, NumericalError, SupervisionPack, automask, build_pseudo_gt,
                     min_reprojection, photometric_error, photometric_loss, radar_loss,
                     reconstruct_view, smoothness, ssim, total_loss, velocity_loss)
from .metrics import GroundTruthSamples, MetricReport, NoSamplesError, evaluate, evaluate_frames
from .radar import (BoundingBox2D, ProjectedRadar, RadarPoint, RadarSweep, accumulate,
                    clutter_removal, duplicate_vertical, inference_filter, object_focused_filter,
                    project_sweep, rasterize_input, select_window)

__version__ = "0.1.0"
