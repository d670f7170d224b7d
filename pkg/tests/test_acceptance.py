"""Acceptance suite: one test group per criterion, each against an independent oracle."""
import filecmp
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from radardepth import _backend, io, synth
from radardepth.association import bilateral_weights
from radardepth.geometry import PoseSE3, compose, invert
from radardepth.gradcheck import run_all
from radardepth.gradients import radar_loss_grad
from radardepth.losses import (automask, build_pseudo_gt, photometric_error, radar_loss,
                               reconstruct_view)
from radardepth.metrics import GroundTruthSamples, evaluate
from radardepth.pipeline import prepare_supervision
from radardepth.radar import (LABEL_OBJECT, BoundingBox2D, ProjectedRadar, RadarSweep, accumulate,
                              clutter_removal, project_sweep)

criterion = pytest.mark.criterion


# -- 1: bilateral weights ---------------------------------------------------

def scalar_weight(image, p, r, box, sigma_r, c=1.5):
    """Bilateral weight written out for one pixel pair."""
    (pu, pv), (ru, rv) = p, r
    if not (box.u_min <= pu <= box.u_max and box.v_min <= pv <= box.v_max):
        return 0.0
    half_w = (box.u_max - box.u_min) / 2.0
    bh = box.v_max - box.v_min
    d_side = min(ru - box.u_min, box.u_max - ru)
    d_top = rv - box.v_min
    s = max(d_side / half_w * d_top / bh, 1e-3)
    sx, sy = c * s * half_w, c * s * bh / 2.0
    di = image[pv, pu] - image[rv, ru]
    expo = -((pu - ru) ** 2 / (2 * sx ** 2) + (pv - rv) ** 2 / (2 * sy ** 2)) \
        - float(di @ di) / (2 * sigma_r ** 2)
    return math.exp(expo)


@criterion(1, "bilateral weights match scalar evaluation on 1000 triples (1e-12); w(r,r)=1")
@pytest.mark.parametrize("backend", sorted(_backend.available()))
def test_bilateral_closed_form(backend):
    kernels = _backend.available()[backend]
    rng = np.random.default_rng(11)
    h, w = 48, 64
    palette = rng.uniform(0, 1, (4, 3))
    worst = 0.0
    for k in range(1000):
        image = palette[rng.integers(0, 4, (h, w))]
        u0, v0 = rng.uniform(-3, w / 2), rng.uniform(-3, h / 2)
        box = BoundingBox2D(u0, v0, u0 + rng.uniform(6, w / 2), v0 + rng.uniform(6, h / 2))
        c0, r0, c1, r1 = box.pixel_bounds((h, w))
        ru, rv = int(rng.integers(c0, c1 + 1)), int(rng.integers(r0, r1 + 1))
        pu, pv = int(rng.integers(0, w)), int(rng.integers(0, h))
        if k % 4 == 0:
            image[pv, pu] = image[rv, ru] + rng.normal(0, 1e-5, 3)  # range term in its live regime
        sigma_r = 1e-5 if k % 2 == 0 else float(rng.uniform(0.05, 0.5))
        entries = ProjectedRadar([ru], [rv], [10.0], [0])
        wr = bilateral_weights(image, entries, [box], sigma_r=sigma_r, kernels=kernels)
        got = wr.values[pv, pu]
        want = scalar_weight(image, (pu, pv), (ru, rv), box, sigma_r)
        worst = max(worst, abs(got - want))
        assert wr.values[rv, ru] == 1.0
    assert worst <= 1e-12


# -- 2: mask confinement and region partition -------------------------------

@criterion(2, "binary mask confined to boxes; regions disjoint and covering the mask (50 scenes)")
def test_mask_partition():
    for seed in range(50):
        scene = synth.generate(1000 + seed, width=288, height=160)
        frame = prepare_supervision(scene)
        mask, region = frame.assoc.mask, frame.assoc.region_id
        h, w = mask.shape
        v, u = np.mgrid[0:h, 0:w]
        in_any = np.zeros_like(mask)
        for b in scene.boxes:
            in_any |= b.contains(u, v)
        assert not (mask & ~in_any).any()
        assert np.array_equal(region >= 0, mask)
        sizes = frame.assoc.region_sizes()
        assert sum(sizes.values()) == int(mask.sum())
        for j in sizes:  # every region stays inside its own seed's box
            box = scene.boxes[frame.entries.box[j]]
            assert box.contains(u[region == j], v[region == j]).all()


# -- 3: radar loss identity -------------------------------------------------

@criterion(3, "L_r equals (1/N) sum |Omega_j| |Delta_j| on 100 rasters (1e-12); 0 when seeds match")
def test_radar_loss_identity():
    scene = synth.generate(21, width=288, height=160)
    frame = prepare_supervision(scene)
    seeds = frame.entries
    rng = np.random.default_rng(3)
    for _ in range(100):
        pred = scene.depth * rng.uniform(0.3, 1.7, scene.depth.shape)
        pack = build_pseudo_gt(pred, seeds, frame.assoc)
        sizes = frame.assoc.region_sizes()
        n = sum(sizes.values())
        deltas = {j: seeds.depth[j] - pred[int(seeds.rows[j]), int(seeds.cols[j])] for j in sizes}
        expected = sum(sizes[j] * abs(deltas[j]) for j in sizes) / n
        got = radar_loss(pred, pack)
        assert n > 0
        assert abs(got - expected) <= 1e-12 * abs(expected)

        # predictions equal to the radar depth at every seed pixel
        matched = pred.copy()
        for j in reversed(range(len(seeds))):  # lowest index wins shared pixels, as in the argmax
            matched[int(seeds.rows[j]), int(seeds.cols[j])] = seeds.depth[j]
        assert radar_loss(matched, build_pseudo_gt(matched, seeds, frame.assoc)) == 0.0


# -- 4: gradients -----------------------------------------------------------

@pytest.fixture(scope="module")
def gradcheck_results():
    return {r.name: r for r in run_all(seed=0, points=500)}


@criterion(4, "analytic gradients of L_p, L_s, L_v, L_r match central differences (500 points each)")
@pytest.mark.parametrize("name", ["L_p", "L_s", "L_v", "L_r"])
def test_gradients(gradcheck_results, name):
    r = gradcheck_results[name]
    assert r.n_checked == 500, r.summary()
    assert r.passed, r.summary()
    assert r.rtol == 1e-4


# -- 5: clutter removal -----------------------------------------------------

@criterion(5, "clutter removal: 100% clutter removed, 100% true points kept; 5.2 m fixture")
def test_clutter_oracle():
    total_clutter = 0
    for seed in range(20):
        scene = synth.generate(2000 + seed, width=288, height=160, ghost_offset_range=(3.0, 10.0))
        acc = accumulate(scene.sweeps, scene.target_time, scene.target_pose, allow_future=True)
        proj = project_sweep(acc, scene.cam, scene.cam_from_ego)
        kept = clutter_removal(proj, scene.boxes, beta=2.0)
        assert set(kept.source.tolist()) == synth.oracle_filter(scene)
        assert (kept.labels == LABEL_OBJECT).all()
        total_clutter += int((proj.labels != LABEL_OBJECT).sum())
    assert total_clutter > 100


@criterion(5, "clutter removal: 100% clutter removed, 100% true points kept; 5.2 m fixture")
def test_clutter_two_points_same_pixel():
    box = BoundingBox2D(100, 50, 180, 120)
    proj = ProjectedRadar([140, 140], [100, 100], [12.3, 17.5], [0, 1])
    kept = clutter_removal(proj, [box], beta=2.0)
    assert kept.source.tolist() == [0]
    assert kept.depth.tolist() == [12.3]


# -- 6: accumulation --------------------------------------------------------

@criterion(6, "accumulation: static points re-align, 2 m/s target lands within 1e-6 m")
def test_accumulation_static_scene():
    rng = np.random.default_rng(6)
    world = rng.uniform([5, -10, 0], [40, 10, 2], (50, 3))
    poses = [PoseSE3.from_yaw(rng.uniform(-0.3, 0.3), rng.uniform(-5, 5, 3)) for _ in range(4)]
    times = [-0.3, -0.2, -0.1, 0.0]
    sweeps = [RadarSweep(invert(p).apply(world), np.zeros((50, 2)), t, p) for p, t in zip(poses, times)]
    acc = accumulate(sweeps, 0.0, poses[-1])
    expected = np.tile(invert(poses[-1]).apply(world), (4, 1))
    assert np.max(np.linalg.norm(acc.positions - expected, axis=1)) <= 1e-6


@criterion(6, "accumulation: static points re-align, 2 m/s target lands within 1e-6 m")
def test_accumulation_moving_target():
    rng = np.random.default_rng(7)
    for _ in range(20):
        ego_then = PoseSE3.from_yaw(rng.uniform(-0.5, 0.5), rng.uniform(-3, 3, 3))
        ego_now = compose(ego_then, PoseSE3.from_yaw(rng.uniform(-0.1, 0.1), [rng.uniform(0, 5), 0, 0]))
        heading = rng.uniform(0, 2 * np.pi)
        v_world = 2.0 * np.array([np.cos(heading), np.sin(heading), 0.0])
        p0 = rng.uniform([5, -5, 0], [30, 5, 1])
        doppler = (ego_then.rotation.T @ v_world)[:2]
        sweep = RadarSweep(invert(ego_then).apply(p0)[None], doppler[None], -0.5, ego_then)
        acc = accumulate([sweep], 0.0, ego_now)
        expected = invert(ego_now).apply(p0 + 0.5 * v_world)
        assert np.linalg.norm(acc.positions[0] - expected) <= 1e-6


# -- 7: warping -------------------------------------------------------------

@criterion(7, "warping: plane + translation mean pe < 0.01; identity pose reproduces source (1e-6)")
def test_warping_plane():
    cam = synth.SynthConfig(width=160, height=96).camera
    for t in ([0.3, 0.0, 0.0], [0.0, 0.2, 0.0], [0.2, -0.1, 0.5]):
        target, source, depth, pose = synth.plane_pair(cam, 8.0, t, seed=1)
        recon, valid = reconstruct_view(source, depth, pose, cam)
        assert valid.mean() > 0.8
        assert photometric_error(target, recon)[valid].mean() < 0.01


@criterion(7, "warping: plane + translation mean pe < 0.01; identity pose reproduces source (1e-6)")
def test_warping_identity():
    rng = np.random.default_rng(8)
    cam = synth.SynthConfig(width=64, height=40).camera
    source = rng.uniform(0, 1, (40, 64, 3))
    depth = rng.uniform(1, 50, (40, 64))
    recon, valid = reconstruct_view(source, depth, PoseSE3.identity(), cam)
    assert valid.all()
    assert np.max(np.abs(recon - source)) <= 1e-6


# -- 8: automask ------------------------------------------------------------

def _reflect(i, n):
    return -i if i < 0 else (2 * (n - 1) - i if i > n - 1 else i)


def scalar_pe(target, recon, i, j, alpha=0.85):
    """Photometric error at one pixel with explicit 3x3 reflect-padded windows."""
    h, w, ch = target.shape
    total = 0.0
    for c in range(ch):
        xs, ys = [], []
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                a, b = _reflect(i + di, h), _reflect(j + dj, w)
                xs.append(target[a, b, c])
                ys.append(recon[a, b, c])
        mx, my = sum(xs) / 9, sum(ys) / 9
        vx = sum(x * x for x in xs) / 9 - mx * mx
        vy = sum(y * y for y in ys) / 9 - my * my
        cxy = sum(x * y for x, y in zip(xs, ys)) / 9 - mx * my
        c1, c2 = 0.01 ** 2, 0.03 ** 2
        s = (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        total += (1 - alpha) * abs(target[i, j, c] - recon[i, j, c]) + alpha / 2 * (1 - s)
    return total / ch


@criterion(8, "automask equals exhaustive per-pixel computation on 100 random 8x8 instances")
def test_automask_bruteforce():
    rng = np.random.default_rng(9)
    for k in range(100):
        target = rng.uniform(0, 1, (8, 8, 3))
        sources = [rng.uniform(0, 1, (8, 8, 3)) for _ in range(2)]
        recons = [rng.uniform(0, 1, (8, 8, 3)) for _ in range(2)]
        if k % 5 == 0:
            recons[0] = sources[1].copy()  # exact ties exercise the strict inequality
        if k % 7 == 0:
            sources[0] = target.copy()     # static scene: identity error 0
        valids = [rng.uniform(size=(8, 8)) > 0.2 for _ in range(2)]
        got = automask(target, sources, recons, valids)
        want = np.zeros((8, 8), dtype=bool)
        for i in range(8):
            for j in range(8):
                warped = [scalar_pe(target, r, i, j) for r, v in zip(recons, valids) if v[i, j]]
                if not warped:
                    continue
                identity = min(scalar_pe(target, s, i, j) for s in sources)
                want[i, j] = identity > min(warped)
        assert np.array_equal(got, want), k


# -- 9: metrics -------------------------------------------------------------

@criterion(9, "metrics fixtures (1.1 and 1.3 ratios) to 1e-12; median scaling zeroes scaled predictions")
def test_metrics_fixtures():
    gt = GroundTruthSamples([0.0], [0.0], [10.0], ["car"])
    r = evaluate(np.full((1, 1), 11.0), gt)
    assert abs(r.AbsRel - 0.1) <= 1e-12
    assert abs(r.SqRel - 0.1) <= 1e-12
    assert abs(r.RMSE - 1.0) <= 1e-12
    assert r.d1 == 100.0
    r = evaluate(np.full((1, 1), 13.0), gt)
    assert r.d1 == 0.0 and r.d2 == 100.0 and r.d3 == 100.0
    assert abs(r.AbsRel - 0.3) <= 1e-12


@criterion(9, "metrics fixtures (1.1 and 1.3 ratios) to 1e-12; median scaling zeroes scaled predictions")
def test_median_scaling():
    rng = np.random.default_rng(10)
    depth = rng.uniform(1, 35, (30, 40))  # 2x stays under the 80 m cap
    rows, cols = rng.integers(0, 30, 200), rng.integers(0, 40, 200)
    gt = GroundTruthSamples(cols, rows, depth[rows, cols], ["x"] * 200)
    for k in (0.5, 2.0, 3.7):
        r = evaluate(depth * k, gt, median_scaling=True)
        assert r.AbsRel <= 1e-12 and r.RMSE <= 1e-10 and r.d1 == 100.0
    assert abs(evaluate(depth * 2.0, gt).AbsRel - 1.0) <= 1e-12


# -- 10: determinism --------------------------------------------------------

def _run(args, cwd, env):
    out = subprocess.run([sys.executable, "-m", "radardepth", *args], cwd=cwd, env=env,
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    return out.stdout


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    assert not cmp.left_only and not cmp.right_only
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    assert not mismatch and not errors, mismatch
    for sub in cmp.common_dirs:
        _same_tree(os.path.join(a, sub), os.path.join(b, sub))


@pytest.fixture(scope="module")
def ten_scenes(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    rng = np.random.default_rng(12)
    scenes, preds = [], []
    for k in range(10):
        scene = synth.generate(300 + k, width=288, height=160)
        d = str(root / f"scene{k:02d}")
        io.save_scene(scene, d)
        p = str(root / f"pred{k:02d}.pfm")
        io.write_pfm(p, scene.depth * rng.uniform(0.8, 1.2, scene.depth.shape))
        scenes.append(d)
        preds.append(p)
    return root, scenes, preds


@criterion(10, "--jobs 1 and --jobs 8 give byte-identical prepare/loss/eval output; synth deterministic")
@pytest.mark.parametrize("command", ["prepare", "loss", "eval"])
def test_jobs_determinism(ten_scenes, command, cli_env):
    root, scenes, preds = ten_scenes
    outputs = []
    for jobs in (1, 8):
        out = root / f"{command}_j{jobs}"
        if command == "eval":
            args = ["eval", "--classes", "car", "--out", str(out)]
            for p, s in zip(preds, scenes):
                args += ["--pair", p, s]
        else:
            args = [command, *scenes, "--out", str(out)]
            for p in preds:
                args += ["--prediction", p]
            if command == "loss":
                args.append("--dump-maps")
        outputs.append(_run(args + ["--jobs", str(jobs)], root, cli_env))
    assert outputs[0] == outputs[1]
    a, b = root / f"{command}_j1", root / f"{command}_j8"
    if command == "eval":
        assert a.read_bytes() == b.read_bytes()
    else:
        _same_tree(a, b)


@criterion(10, "--jobs 1 and --jobs 8 give byte-identical prepare/loss/eval output; synth deterministic")
def test_synth_determinism(tmp_path, cli_env):
    for name in ("a", "b"):
        _run(["synth", "--seed", "77", "--out", name, "--width", "192", "--height", "112"], tmp_path, cli_env)
    _same_tree(tmp_path / "a", tmp_path / "b")
    one = synth.generate(78, width=192, height=112)
    two = synth.generate(78, width=192, height=112)
    assert one.target.tobytes() == two.target.tobytes()
    assert all(x.positions.tobytes() == y.positions.tobytes() for x, y in zip(one.sweeps, two.sweeps))


# -- 11: end-to-end directional check ---------------------------------------

def exact_line_search(f, x, direction, breakpoints):
    """Minimize a convex piecewise-linear ``f(x - eta * direction)`` over its kinks."""
    best_eta, best = 0.0, f(x)
    for eta in np.unique(breakpoints[breakpoints > 0]):
        val = f(x - eta * direction)
        if val < best:
            best_eta, best = eta, val
    return best_eta


@criterion(11, "oncoming car: one L_r gradient step with line search cuts object AbsRel >= 90%")
def test_oncoming_car_descent():
    scene = synth.generate(5, n_boxes=1, box_speed_range=(-12.0, -12.0), depth_range=(10.0, 20.0),
                           p_multipath=0.35, n_gt_samples=20000)
    obj = scene.instance == 0
    pred = np.where(obj, 0.5 * scene.depth, scene.depth)
    frame = prepare_supervision(scene, prediction=pred)
    pack = frame.pack
    grad = radar_loss_grad(pred, pack)
    with np.errstate(divide="ignore", invalid="ignore"):
        kinks = np.where(pack.mask, (pred - pack.pseudo_gt) / grad, 0.0)
    eta = exact_line_search(lambda d: radar_loss(d, pack), pred, grad, kinks[pack.mask])
    updated = pred - eta * grad

    assert np.array_equal(updated[~pack.mask], pred[~pack.mask])  # unmasked pixels untouched
    before = evaluate(pred, scene.gt, class_filter="car").AbsRel
    after = evaluate(updated, scene.gt, class_filter="car").AbsRel
    coverage = (pack.mask & obj).sum() / obj.sum()
    reduction = 1.0 - after / before
    print(f"object AbsRel {before:.4f} -> {after:.4f} (reduction {100 * reduction:.1f}%), "
          f"mask covers {100 * coverage:.1f}% of the object")
    assert reduction >= 0.90
