"""Compare the compiled and numpy kernels on realistic workloads.

    python benchmarks/bench_kernels.py [--repeat 5]

Inputs come from synthetic scenes at the default 576x320 resolution, so
seed counts and box sizes match what the pipeline actually feeds the kernels.
"""
import argparse
import timeit

import numpy as np

from radardepth import _backend, synth
from radardepth.association import adaptive_sigma
from radardepth.config import Config
from radardepth.pipeline import accumulate_projected, prepare_supervision
from radardepth.radar import window_starts


def window_case(scene, cfg):
    _, proj, _ = accumulate_projected(scene, cfg.input_sweeps_past, 0)
    h, w = scene.cam.shape
    xs = window_starts(w, cfg.window_w, cfg.window_stride)
    ys = window_starts(h, cfg.window_h, cfg.window_stride)
    return (proj.cols, proj.rows, proj.depth, xs, ys, min(cfg.window_w, w), min(cfg.window_h, h),
            cfg.beta), len(proj)


def bilateral_case(scene, cfg):
    seeds = prepare_supervision(scene, cfg).entries
    h, w = scene.cam.shape
    boxes = scene.boxes
    sx, sy = zip(*(adaptive_sigma(float(c), float(r), boxes[b], cfg.sigma_scale)
                   for c, r, b in zip(seeds.cols, seeds.rows, seeds.box)))
    bounds = np.array([boxes[b].pixel_bounds((h, w)) for b in seeds.box], dtype=np.int64)
    return (scene.target, seeds.cols, seeds.rows, bounds, np.array(sx), np.array(sy), cfg.sigma_r), len(seeds)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = Config()
    scene = synth.generate(args.seed)
    cases = {"window_min_filter": window_case(scene, cfg), "bilateral_max": bilateral_case(scene, cfg)}
    backends = _backend.available()
    if "cython" not in backends:
        print("compiled kernels not built; timing the numpy fallback only")

    print(f"{'kernel':<18} {'n':>5} " + " ".join(f"{b + ' ms':>12}" for b in backends) + "  speedup")
    for name, (kargs, n) in cases.items():
        times = {}
        for bname, mod in backends.items():
            fn = getattr(mod, name)
            number = 3
            best = min(timeit.repeat(lambda: fn(*kargs), number=number, repeat=args.repeat)) / number
            times[bname] = 1e3 * best
        speed = f"{times['python'] / times['cython']:7.1f}x" if "cython" in times else "      -"
        print(f"{name:<18} {n:>5} " + " ".join(f"{t:12.3f}" for t in times.values()) + "  " + speed)


if __name__ == "__main__":
    main()
