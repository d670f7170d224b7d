import warnings

import numpy as np
import pytest

from radardepth import synth
from radardepth.association import BinaryAssociation
from radardepth.geometry import CameraModel, PoseSE3
from radardepth.losses import (SSIM_C1, LossReport, NumericalError, automask, avg_pool3,
                               build_pseudo_gt, min_reprojection, multiscale_losses,
                               photometric_error, photometric_loss, radar_loss, reconstruct_view,
                               smoothness, ssim, total_loss, upsample_bilinear, velocity_loss)
from radardepth.radar import ProjectedRadar

CAM = CameraModel(50.0, 50.0, 31.5, 19.5, 64, 40)


# -- view synthesis ---------------------------------------------------------

def test_identity_pose_reproduces_source():
    rng = np.random.default_rng(0)
    src = rng.uniform(0, 1, (40, 64, 3))
    recon, valid = reconstruct_view(src, np.full((40, 64), 7.0), PoseSE3.identity(), CAM)
    assert valid.all()
    assert np.max(np.abs(recon - src)) < 1e-6


def test_constant_source():
    src = np.full((40, 64, 3), 0.25)
    recon, valid = reconstruct_view(src, np.full((40, 64), 5.0), PoseSE3.from_translation([0.4, 0, 0]), CAM)
    assert np.allclose(recon[valid], 0.25)
    assert not valid.all()


def test_uniform_disparity_shift():
    # x-ramp image: a translation t along x shifts samples by fx * t / d pixels
    u = np.arange(64, dtype=float)
    src = np.repeat(np.repeat((u / 63.0)[None, :, None], 40, axis=0), 3, axis=2)
    d, t = 10.0, 1.0
    recon, valid = reconstruct_view(src, np.full((40, 64), d), PoseSE3.from_translation([t, 0, 0]), CAM)
    shift = CAM.fx * t / d
    expected = np.clip(u + shift, 0, 63) / 63.0
    assert np.max(np.abs(recon[valid] - np.broadcast_to(expected[None, :, None], recon.shape)[valid])) < 1 / 255


# -- photometric terms ------------------------------------------------------

def test_avg_pool3_reflect():
    x = np.arange(9, dtype=float).reshape(3, 3, 1)
    p = avg_pool3(x)
    # corner window with reflect padding: rows (1,0,1) x cols (1,0,1)
    rows, cols = [1, 0, 1], [1, 0, 1]
    assert p[0, 0, 0] == pytest.approx(np.mean([x[r, c, 0] for r in rows for c in cols]))
    assert p[1, 1, 0] == pytest.approx(4.0)


def test_pe_identical_images():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, (10, 12, 3))
    assert np.allclose(photometric_error(img, img), 0.0, atol=1e-15)
    assert np.allclose(ssim(img, img), 1.0)


def test_pe_black_vs_white():
    # constant images: SSIM = C1 / (1 + C1) from the luminance term alone
    pe = photometric_error(np.zeros((6, 6, 3)), np.ones((6, 6, 3)))
    expected = 0.15 + 0.425 * (1 - SSIM_C1 / (1 + SSIM_C1))
    assert np.allclose(pe, expected, rtol=1e-14)


def test_pe_bounds():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pe = photometric_error(rng.uniform(0, 1, (8, 8, 3)), rng.uniform(0, 1, (8, 8, 3)))
        assert pe.min() >= 0 and pe.max() <= 1


def test_min_reprojection():
    t = np.zeros((4, 4, 3))
    r1 = np.full((4, 4, 3), 0.2)
    r2 = np.full((4, 4, 3), 0.5)
    single, _ = min_reprojection(t, [r1])
    assert np.array_equal(single, photometric_error(t, r1))
    both, arg = min_reprojection(t, [r2, r1])
    assert np.array_equal(both, single) and (arg == 1).all()
    valid = [np.ones((4, 4), bool), np.zeros((4, 4), bool)]
    masked, arg = min_reprojection(t, [r2, r1], valid)
    assert np.array_equal(masked, photometric_error(t, r2)) and (arg == 0).all()
    with pytest.raises(ValueError):
        min_reprojection(t, [])


def test_automask_examples():
    rng = np.random.default_rng(3)
    target = rng.uniform(0, 1, (6, 6, 3))
    noisy = np.clip(target + 0.1, 0, 1)
    # static pixel: source equals target -> never masked in
    assert not automask(target, [target], [noisy]).any()
    # reconstruction better than the unwarped source -> masked in
    far = np.clip(target + 0.4, 0, 1)
    assert automask(target, [far], [noisy]).all()
    # equal errors -> strict inequality keeps them out
    assert not automask(target, [noisy], [noisy]).any()


def test_photometric_loss_averages_masked():
    rng = np.random.default_rng(4)
    target = rng.uniform(0, 1, (6, 6, 3))
    recon = np.clip(target + 0.05, 0, 1)
    value, pe_min, mask = photometric_loss(target, [1 - target], [recon])
    assert mask.all()
    assert value == pytest.approx(pe_min.mean())


def test_smoothness_constant_depth():
    assert smoothness(np.zeros((5, 5, 3)), np.full((5, 5), 3.0)) == 0.0


def test_smoothness_ramp_4x1():
    inv = np.array([[1.0, 2.0, 3.0, 4.0]])
    dn = inv / inv.mean()
    expected = np.mean(np.abs(np.diff(dn)))  # = 0.4, one horizontal direction
    assert smoothness(np.zeros((1, 4, 3)), 1.0 / inv) == pytest.approx(expected)
    assert expected == pytest.approx(0.4)


def test_smoothness_edge_aware():
    depth = 1.0 / np.array([[1.0, 2.0, 3.0, 4.0]])
    edge = np.zeros((1, 4, 3))
    edge[:, 2:] = 1.0
    assert smoothness(edge, depth) < smoothness(np.zeros((1, 4, 3)), depth)


def test_smoothness_needs_positive_depth():
    with pytest.raises(ValueError):
        smoothness(np.zeros((2, 2, 3)), np.array([[1.0, 0.0], [1.0, 1.0]]))


def test_velocity_loss():
    assert velocity_loss([3, 4, 0], 5.0) == 0.0
    assert velocity_loss([0, 0, 5], 4.0) == 1.0
    rotated = PoseSE3.from_yaw(0.7).apply([3.0, 4.0, 0.0])
    assert velocity_loss(rotated, 5.0) == pytest.approx(0.0, abs=1e-12)
    assert velocity_loss(PoseSE3.from_translation([0, 0, 2]), 1.0) == 1.0
    with pytest.raises(ValueError):
        velocity_loss([1, 0, 0], -1.0)


# -- radar supervision ------------------------------------------------------

def line_assoc(regions):
    region = np.array([regions])
    return BinaryAssociation(region >= 0, region, 0.5)


def test_pseudo_gt_shift():
    pred = np.array([[4.0, 5.0, 6.0]])
    seeds = ProjectedRadar([1], [0], [7.0], [0])
    pack = build_pseudo_gt(pred, seeds, line_assoc([0, 0, 0]))
    assert pack.pseudo_gt.tolist() == [[6.0, 7.0, 8.0]]
    assert pack.deltas.tolist() == [2.0]


def test_pseudo_gt_zero_shift():
    pred = np.array([[4.0, 5.0, 6.0]])
    pack = build_pseudo_gt(pred, ProjectedRadar([1], [0], [5.0], [0]), line_assoc([0, 0, 0]))
    assert np.array_equal(pack.pseudo_gt, pred)


def test_pseudo_gt_independent_regions():
    pred = np.array([[4.0, 5.0, 6.0, 9.0]])
    seeds = ProjectedRadar([0, 3], [0, 0], [6.0, 8.0], [0, 1])
    pack = build_pseudo_gt(pred, seeds, line_assoc([0, 0, -1, 1]))
    assert pack.pseudo_gt.tolist() == [[6.0, 7.0, 0.0, 8.0]]
    assert np.array_equal(pack.mask, [[True, True, False, True]])


def test_pseudo_gt_is_frozen():
    pred = np.array([[4.0, 5.0, 6.0]])
    pack = build_pseudo_gt(pred, ProjectedRadar([1], [0], [7.0], [0]), line_assoc([0, 0, 0]))
    pred[0, 0] = 100.0
    assert pack.pseudo_gt[0, 0] == 6.0


def test_pseudo_gt_invalid_seed_dropped():
    pred = np.array([[4.0, np.nan, 6.0]])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pack = build_pseudo_gt(pred, ProjectedRadar([1], [0], [7.0], [0]), line_assoc([0, 0, 0]))
    assert caught and not pack.mask.any()


def test_radar_loss_examples():
    pred = np.full((2, 5), 3.0)
    region = np.zeros((2, 5), dtype=int)
    pack = build_pseudo_gt(pred, ProjectedRadar([0], [0], [5.0], [0]),
                           BinaryAssociation(region >= 0, region, 0.5))
    assert radar_loss(pred, pack) == 2.0
    assert radar_loss(pack.pseudo_gt, pack) == 0.0
    assert radar_loss(pred, pack, normalize="all") == 2.0
    with pytest.raises(ValueError):
        radar_loss(pred, pack, normalize="bogus")


def test_radar_loss_empty_mask():
    pred = np.ones((3, 3))
    assoc = BinaryAssociation(np.zeros((3, 3), bool), np.full((3, 3), -1), 0.5)
    assert radar_loss(pred, build_pseudo_gt(pred, ProjectedRadar.empty(), assoc)) == 0.0


def test_radar_loss_normalize_all():
    pred = np.full((2, 5), 3.0)
    region = np.array([[0, 0, -1, -1, -1], [-1, -1, -1, -1, -1]])
    pack = build_pseudo_gt(pred, ProjectedRadar([0], [0], [5.0], [0]),
                           BinaryAssociation(region >= 0, region, 0.5))
    assert radar_loss(pred, pack) == 2.0
    assert radar_loss(pred, pack, normalize="all") == pytest.approx(0.4)


# -- total ------------------------------------------------------------------

def test_total_loss():
    assert total_loss(0, 0, 0, 0).total == 0.0
    assert total_loss(1, 0, 0, 0).total == 1.0
    r = total_loss(0.3, 2.0, 0.5, 1.5)
    assert r.total == pytest.approx(0.3 + 1e-3 * 2.0 + 0.02 * 0.5 + 0.2 * 1.5, rel=1e-12)


def test_total_loss_rejects_nan_and_negative():
    with pytest.raises(NumericalError):
        total_loss(float("nan"), 0, 0, 0)
    with pytest.raises(ValueError):
        total_loss(-1.0, 0, 0, 0)


def test_loss_report_text_round_trip():
    r = total_loss(0.1, 0.2, 0.3, 0.4)
    assert LossReport.from_text(r.to_text()) == r


def test_upsample_identity_and_constant():
    x = np.arange(12, dtype=float).reshape(3, 4)
    assert np.array_equal(upsample_bilinear(x, (3, 4)), x)
    assert np.allclose(upsample_bilinear(np.full((2, 3), 5.0), (8, 12)), 5.0)


def test_multiscale_averages_scales():
    cfg = synth.SynthConfig(width=64, height=40)
    target, source, depth, pose = synth.plane_pair(cfg.camera, 6.0, [0.2, 0, 0])
    lp1, ls1 = multiscale_losses(target, [source], [depth], [pose], cfg.camera)
    lp2, ls2 = multiscale_losses(target, [source], [depth, depth[::2, ::2]], [pose], cfg.camera)
    assert lp2 == pytest.approx(lp1) and ls1 == ls2 == 0.0
    with pytest.raises(ValueError):
        multiscale_losses(target, [source], [], [pose], cfg.camera)


def test_true_depth_scene_losses(small_scene):
    from radardepth.pipeline import scene_losses

    report, maps = scene_losses(small_scene, [small_scene.depth])
    assert report.L_p < 0.01
    assert report.L_v == 0.0
    assert report.L_r < 1e-5
    assert set(maps) >= {"photometric", "automask", "radar_mask"}


def test_object_underestimate_radar_loss(small_scene):
    from radardepth.pipeline import prepare_supervision

    obj = small_scene.instance == 0
    pred = np.where(obj, 0.7 * small_scene.depth, small_scene.depth)
    frame = prepare_supervision(small_scene, prediction=pred)
    pack = frame.pack
    on_obj = pack.mask & obj
    assert on_obj.any()
    expected = np.sum(0.3 * small_scene.depth[on_obj]) / pack.n_masked
    # other objects are predicted exactly; only float32 rounding remains there
    assert radar_loss(pred, pack) == pytest.approx(expected, rel=1e-5)
