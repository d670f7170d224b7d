"""Command-line interface.

Exit codes: 0 success, 1 validation error, 2 numerical error.
"""
from __future__ import annotations

import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np

from . import io, synth
from .config import Config, load_config
from .losses import NumericalError
from .metrics import MetricReport, NoSamplesError, evaluate, evaluate_frames
from .pipeline import prepare_input, prepare_supervision, scene_losses

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2

logger = logging.getLogger("radardepth")


def _map(fn, items, jobs: int):
    """Ordered map, optionally across worker processes."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _name(path: str) -> str:
    return os.path.basename(os.path.normpath(path))


def _unique_names(paths) -> list:
    names = [_name(p) for p in paths]
    if len(set(names)) != len(names):
        raise click.BadParameter("scene directory names must be unique")
    return names


def _kv_text(d: dict) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in d.items())


def _cfg(ctx) -> Config:
    return ctx.obj["config"]


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="YAML config file (default: $RADARDEPTH_CONFIG).")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override a config value, e.g. --set beta=3.")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def cli(ctx, config_path, overrides, verbose):
    """Radar supervision, radar input preparation, losses and evaluation."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config"] = load_config(config_path, overrides)


# -- synth ------------------------------------------------------------------

@cli.command("synth")
@click.option("--seed", type=int, required=True, help="Scene seed; same seed, same bytes.")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output scene directory.")
@click.option("--width", type=int, default=576, show_default=True, help="Image width.")
@click.option("--height", type=int, default=320, show_default=True, help="Image height.")
@click.option("--boxes", type=int, default=3, show_default=True, help="Number of objects.")
@click.option("--p-multipath", type=float, default=0.35, show_default=True,
              help="Probability that an object return is a multipath ghost.")
@click.option("--p-see-through", type=float, default=0.1, show_default=True,
              help="Probability that an object return sees through to the wall.")
@click.option("--object-speed", type=float, default=0.0, show_default=True,
              help="Object speed along the driving direction in m/s (negative: oncoming).")
def synth_cmd(seed, out, width, height, boxes, p_multipath, p_see_through, object_speed):
    """Generate a synthetic scene with full ground truth."""
    scene = synth.generate(seed, width=width, height=height, n_boxes=boxes, p_multipath=p_multipath,
                           p_see_through=p_see_through, box_speed_range=(object_speed, object_speed))
    io.save_scene(scene, out)
    click.echo(f"wrote {out}: {len(scene.boxes)} boxes, {scene.n_radar} radar points")


# -- prepare ----------------------------------------------------------------

def _prepare_one(args):
    scene_dir, pred_path, cfg, out_dir = args
    scene = io.load_scene(scene_dir)
    prediction = io.read_pfm(pred_path) if pred_path else None
    if prediction is not None and prediction.shape != scene.cam.shape:
        raise io.SceneValidationError("prediction", f"is {prediction.shape}, scene is {scene.cam.shape}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        frame = prepare_supervision(scene, cfg, prediction)
    notes = [str(w.message) for w in caught]
    if not scene.boxes:
        notes.append("scene has no boxes; supervision is empty")
    os.makedirs(out_dir, exist_ok=True)
    mask = frame.pack.mask if frame.pack is not None else frame.assoc.mask
    region = frame.pack.region_id if frame.pack is not None else frame.assoc.region_id
    io.write_pfm(os.path.join(out_dir, "mask.pfm"), mask.astype(np.float32))
    io.write_pfm(os.path.join(out_dir, "regions.pfm"), region.astype(np.float32))
    io.write_pfm(os.path.join(out_dir, "weights.pfm"), frame.weights.values)
    if frame.pack is not None:
        io.write_pfm(os.path.join(out_dir, "pseudo_gt.pfm"), frame.pack.pseudo_gt)
    e = frame.entries
    seeds = [{"u": float(a), "v": float(b), "depth": float(d), "source": int(s), "box": int(k)}
             for a, b, d, s, k in zip(e.u, e.v, e.depth, e.source, e.box)]
    with open(os.path.join(out_dir, "seeds.json"), "w") as f:
        json.dump({"seeds": seeds}, f, indent=1)
        f.write("\n")
    with open(os.path.join(out_dir, "provenance.txt"), "w") as f:
        f.write(_kv_text(frame.provenance))
    return frame.provenance, notes


@cli.command("prepare")
@click.argument("scenes", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Output directory; one subdirectory per scene.")
@click.option("--prediction", "predictions", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Depth prediction PFM per scene (in scene order); enables pseudo ground truth.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes.")
@click.pass_context
def prepare_cmd(ctx, scenes, out, predictions, jobs):
    """Build radar supervision: filtered, duplicated and expanded radar seeds.

    Writes mask.pfm, regions.pfm, weights.pfm, seeds.json, provenance.txt
    and, with --prediction, pseudo_gt.pfm.
    """
    if predictions and len(predictions) != len(scenes):
        raise click.BadParameter("give one --prediction per scene", param_hint="--prediction")
    names = _unique_names(scenes)
    preds = list(predictions) or [None] * len(scenes)
    cfg = _cfg(ctx)
    jobs_args = [(s, p, cfg, os.path.join(out, n)) for s, p, n in zip(scenes, preds, names)]
    for name, (prov, notes) in zip(names, _map(_prepare_one, jobs_args, jobs)):
        for note in notes:
            click.echo(f"warning: {name}: {note}", err=True)
        click.echo(f"{name}: " + ", ".join(f"{k}={v}" for k, v in prov.items()))


# -- loss -------------------------------------------------------------------

def _load_poses(path):
    with open(path) as f:
        doc = json.load(f)
    poses = doc.get("poses") if isinstance(doc, dict) else None
    if not isinstance(poses, list):
        raise io.SceneValidationError("poses", "expected a list of 12-number poses")
    return [io.parse_pose(p, f"poses[{k}]") for k, p in enumerate(poses)]


def _loss_one(args):
    scene_dir, pred_list, pose_path, cfg, out_dir, dump = args
    scene = io.load_scene(scene_dir)
    preds = [io.read_pfm(p) for p in pred_list.split(",")]
    for k, p in enumerate(preds):
        if not np.all(np.isfinite(p)):
            raise NumericalError(f"prediction scale {k} contains non-finite values")
    poses = _load_poses(pose_path) if pose_path else None
    if preds[0].shape != scene.cam.shape:
        raise io.SceneValidationError("prediction", f"is {preds[0].shape}, scene is {scene.cam.shape}")
    report, maps = scene_losses(scene, preds, poses, cfg)
    os.makedirs(out_dir, exist_ok=True)
    text = report.to_text()
    with open(os.path.join(out_dir, "loss.txt"), "w") as f:
        f.write(text)
    if dump:
        for key, raster in maps.items():
            io.write_pfm(os.path.join(out_dir, f"{key}.pfm"), raster)
    return text


@cli.command("loss")
@click.argument("scenes", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--prediction", "predictions", multiple=True, required=True,
              help="Per scene: comma-separated PFM depth predictions, finest scale first.")
@click.option("--poses", "pose_files", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Per scene: JSON {'poses': [[12 numbers], ...]} target-to-source estimates "
                   "(default: the scene's reference poses).")
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Output directory; one subdirectory per scene with loss.txt.")
@click.option("--dump-maps", is_flag=True, help="Also write per-pixel loss rasters.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes.")
@click.pass_context
def loss_cmd(ctx, scenes, predictions, pose_files, out, dump_maps, jobs):
    """Photometric, smoothness, velocity and radar losses and their weighted total."""
    if len(predictions) != len(scenes):
        raise click.BadParameter("give one --prediction per scene", param_hint="--prediction")
    if pose_files and len(pose_files) != len(scenes):
        raise click.BadParameter("give one --poses per scene", param_hint="--poses")
    names = _unique_names(scenes)
    poses = list(pose_files) or [None] * len(scenes)
    cfg = _cfg(ctx)
    args = [(s, p, q, cfg, os.path.join(out, n), dump_maps)
            for s, p, q, n in zip(scenes, predictions, poses, names)]
    for name, text in zip(names, _map(_loss_one, args, jobs)):
        click.echo(f"[{name}]\n{text}", nl=False)


# -- filter-input -----------------------------------------------------------

def _filter_one(args):
    scene_dir, cfg, out_dir = args
    scene = io.load_scene(scene_dir)
    raster, _, stats = prepare_input(scene, cfg)
    os.makedirs(out_dir, exist_ok=True)
    io.write_pfm(os.path.join(out_dir, "radar_input.pfm"), raster)
    with open(os.path.join(out_dir, "occupancy.txt"), "w") as f:
        f.write(_kv_text(stats))
    return stats


@cli.command("filter-input")
@click.argument("scenes", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Output directory; one subdirectory per scene with radar_input.pfm.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes.")
@click.pass_context
def filter_input_cmd(ctx, scenes, out, jobs):
    """Sparse radar network input: past sweeps, sliding-window min filter, rasterized."""
    names = _unique_names(scenes)
    cfg = _cfg(ctx)
    args = [(s, cfg, os.path.join(out, n)) for s, n in zip(scenes, names)]
    for name, st in zip(names, _map(_filter_one, args, jobs)):
        click.echo(f"{name}: kept {st['kept']}/{st['projected']} points, "
                   f"{st['occupied_pixels']} pixels occupied ({100 * st['occupancy']:.4f}%)")


# -- eval -------------------------------------------------------------------

def _load_pair(args):
    pred_path, gt_path = args
    pred = io.read_pfm(pred_path)
    gt = io.load_gt_samples(gt_path)
    if not np.all(np.isfinite(pred)):
        raise NumericalError(f"{pred_path} contains non-finite values")
    return pred, gt


def _per_frame_class(frames, cls, kw):
    reps = []
    for pred, gt in frames:
        try:
            reps.append(evaluate(pred, gt, class_filter=cls, **kw))
        except NoSamplesError:
            continue
    if not reps:
        return None
    mean = np.mean([r.values() for r in reps], axis=0)
    return MetricReport(*map(float, mean), count=sum(r.count for r in reps))


@cli.command("eval")
@click.option("--pair", "pairs", nargs=2, multiple=True, required=True,
              type=(click.Path(exists=True, dir_okay=False), click.Path(exists=True)),
              metavar="PRED GT", help="Prediction PFM and ground-truth samples (scene dir or JSON).")
@click.option("--classes", default="", help="Comma-separated class labels for per-class rows.")
@click.option("--median-scale", is_flag=True, help="Rescale predictions by the ratio of medians.")
@click.option("--max-depth", type=float, default=None, help="Evaluation cap in meters [default: 80].")
@click.option("--min-depth", type=float, default=None, help="Evaluation floor in meters [default: 0.1].")
@click.option("--per-frame", is_flag=True, help="Average per-frame metrics instead of pooling samples.")
@click.option("--out", type=click.Path(dir_okay=False), help="Also write the table to this file.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes.")
@click.pass_context
def eval_cmd(ctx, pairs, classes, median_scale, max_depth, min_depth, per_frame, out, jobs):
    """Depth metrics (AbsRel, SqRel, RMSE, RMSElog, δ1-δ3) at ground-truth samples."""
    cfg = _cfg(ctx)
    frames = _map(_load_pair, pairs, jobs)
    kw = dict(max_depth=cfg.max_depth if max_depth is None else max_depth,
              min_depth=cfg.min_depth if min_depth is None else min_depth,
              median_scaling=median_scale or cfg.median_scaling)
    class_list = tuple(c for c in classes.split(",") if c)
    if per_frame:
        report = evaluate_frames(frames, pooled=False, **kw)
        for cls in class_list:
            report.per_class[cls] = _per_frame_class(frames, cls, kw)
    else:
        report = evaluate_frames(frames, pooled=True, classes=class_list, **kw)
    table = report.to_table()
    click.echo(table, nl=False)
    if out:
        with open(out, "w") as f:
            f.write(table)


# -- gradcheck --------------------------------------------------------------

@cli.command("gradcheck")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for the test problems.")
@click.option("--points", type=int, default=500, show_default=True, help="Points checked per loss.")
@click.option("--inject-sign-error", type=click.Choice(["L_p", "L_s", "L_v", "L_r"]), hidden=True,
              help="Flip one analytic gradient to self-test the checker.")
def gradcheck_cmd(seed, points, inject_sign_error):
    """Check analytic loss gradients against central differences (h=1e-4, 1e-4 relative)."""
    from .gradcheck import run_all

    results = run_all(seed=seed, points=points, flip=inject_sign_error)
    for r in results:
        click.echo(r.summary())
    if not all(r.passed for r in results):
        raise NumericalError("gradient check failed")


def main(argv=None) -> int:
    """Entry point; maps errors onto the documented exit codes."""
    try:
        cli.main(args=argv, prog_name="radardepth", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_VALIDATION
    except click.ClickException as e:
        e.show()
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError, ArithmeticError) as e:
        click.echo(f"numerical error: {e}", err=True)
        return EXIT_NUMERICAL
    except (ValueError, OSError, KeyError) as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
