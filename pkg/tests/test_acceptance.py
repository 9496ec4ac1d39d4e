"""
Acceptance criteria 1-11. Each test records a one-line verdict that the
terminal summary prints, then asserts it.
"""

import filecmp
import math
import time

import numpy as np

from endodepth import costvolume, fixture_path, patchmatch, refine, synth, teaching
from endodepth.cli import main
from endodepth.evalio import compute_metrics
from endodepth.geometry import (Intrinsics, RigidTransform, back_project, project,
                                synthesize_view)
from endodepth.photometric import photometric_error

from conftest import abs_rel, random_pose, scene_inputs


def homogeneous(p, d, K, M):
    Kh = np.zeros((3, 4))
    Kh[:, :3] = K.matrix
    X = np.append(d * np.linalg.inv(K.matrix) @ np.array([p[0], p[1], 1.0]), 1.0)
    q = Kh @ M.matrix @ X
    return np.array([q[0] / q[2], q[1] / q[2], q[2]])


def test_01_geometry_oracle(acceptance):
    rng = np.random.default_rng(2024)
    K = Intrinsics.from_fov(128, 96, 60.0)
    worst = worst_abs = worst_rt = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        M = random_pose(rng, 0.1, 10.0)
        p = rng.uniform([0, 0], [127, 95])
        d = rng.uniform(20, 200)
        pr = project(p, d, K, M)
        ref = homogeneous(p, d, K, M)
        diff = np.abs(np.array([pr.x, pr.y, pr.depth]) - ref)
        # points grazing the camera plane land ~1e5 px away; compare in units of the value
        worst = max(worst, np.max(diff / np.maximum(1.0, np.abs(ref))))
        worst_abs = max(worst_abs, diff.max())
        # back through the inverse pose: the original 3-D point
        Y = np.array([(pr.x - K.cx) / K.fx, (pr.y - K.cy) / K.fy, 1.0]) * pr.depth
        worst_rt = max(worst_rt, np.max(np.abs(M.inverse().apply(Y) - back_project(p, d, K))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and worst_rt <= 1e-9 and dt < 1.0
    acceptance(1, "geometry oracle", ok,
               f"max err {worst:.1e} (absolute {worst_abs:.1e}), round trip {worst_rt:.1e}, {dt:.2f} s")
    assert ok


def test_02_photoconsistency_at_truth(acceptance, plane_views):
    spec, views = plane_views
    warped, mask = synthesize_view(views[0].depth, views[1].image, spec.intrinsics,
                                   synth.relative_pose(views, 0, 1))
    err = photometric_error(views[0].image, warped, mask).mean()
    ok = views[0].image.shape[:2] == (96, 128) and err < 1e-3
    acceptance(2, "photoconsistency at truth", ok, f"mean error {err:.2e} on {mask.sum()} px")
    assert ok


def test_03_cost_volume_recovery(acceptance, plane_views):
    spec, views = plane_views
    t0 = time.perf_counter()
    feats = [costvolume.extract_features(v.image, "patch3") for v in views]
    cv = costvolume.build_cost_volume(feats[0], feats[1:], [synth.relative_pose(views, 0, 1)],
                                      spec.intrinsics, costvolume.DepthRangeState(50.0, 150.0), 32)
    soft = costvolume.soft_argmin_depth(cv, 0.002)
    dt = time.perf_counter() - t0
    planes = cv.plane_depths
    gap = np.abs(planes - 100.0)
    nearest = np.flatnonzero(gap <= gap.min() + 1e-9)      # 100 mm is equidistant from two planes
    textured = patchmatch.gradient_magnitude(views[0].image) > 0
    # a pixel whose true match leaves the source image carries no evidence
    seen = cv.valid[nearest].all(axis=0)
    hit = np.isin(cv.hard_argmin(), nearest)[textured & seen].mean()
    ar = abs_rel(soft, views[0].depth)
    bound = 0.5 * (planes[1] - planes[0]) / 100.0
    ok = hit >= 0.95 and ar <= bound and dt < 5.0
    acceptance(3, "cost-volume recovery", ok,
               f"nearest plane {100 * hit:.1f}%, soft-argmin Abs Rel {ar:.4f} (<= {bound:.4f}), {dt:.2f} s")
    assert ok


def test_04_ema_contract(acceptance):
    rng = np.random.default_rng(4)
    s = costvolume.DepthRangeState(50.0, 150.0)
    lo, hi, worst = 50.0, 150.0, 0.0
    for _ in range(100):
        batch = [rng.uniform(30, 180, (8, 8)) for _ in range(4)]
        s = costvolume.update_depth_range(s, batch)
        lo = 0.99 * lo + 0.01 * np.mean([b.min() for b in batch])
        hi = 0.99 * hi + 0.01 * np.mean([b.max() for b in batch])
        worst = max(worst, abs(s.d_min - lo), abs(s.d_max - hi))
    # constant batches: the gap to the batch statistics shrinks by 0.99 per step
    s = costvolume.DepthRangeState(50.0, 150.0)
    const = [np.array([[70.0, 110.0]])]
    rates = []
    for _ in range(100):
        n = costvolume.update_depth_range(s, const)
        rates.append(1 - (n.d_min - 70.0) / (s.d_min - 70.0))
        rates.append(1 - (n.d_max - 110.0) / (s.d_max - 110.0))
        s = n
    rate_err = max(abs(r - 0.01) for r in rates)
    ok = worst <= 1e-12 and rate_err < 1e-9
    acceptance(4, "EMA contract", ok, f"recurrence err {worst:.1e}, rate 0.01 +/- {rate_err:.1e}")
    assert ok


def test_05_gradient_verification(acceptance):
    rng = np.random.default_rng(3)
    K = Intrinsics.from_fov(16, 16, 60.0)
    poses = (RigidTransform.identity(),
             RigidTransform.from_axis_angle(rng.normal(0, 0.02, 3), (-3.0, 0.5, 0.3)),
             RigidTransform.from_axis_angle(rng.normal(0, 0.02, 3), (3.0, -0.4, 0.2)))
    spec = synth.SceneSpec(geometry="sphere_on_plane", depth=100.0, sphere_center=(0, 0, 80.0),
                           sphere_radius=15.0, texture="noise", texture_scale=3.0, channels=3,
                           intrinsics=K, poses=poses, rng_seed=1)
    v = synth.render(spec)
    gt = v[0].depth
    doms = patchmatch.build_support_domains(v[0].image,
                                            patchmatch.detect_keypoints(v[0].image, 100, cell=2))
    D = gt * np.exp(rng.normal(0, 0.03, gt.shape))
    scene = scene_inputs(spec, v, doms, teacher=gt * np.exp(rng.normal(0, 0.05, gt.shape)),
                         reference=gt * np.exp(rng.normal(0, 0.05, gt.shape)),
                         occlusion=rng.random(gt.shape) > 0.3)
    errs, zero_ops, checked = {}, True, {}
    for i, k in enumerate(refine.TERMS):
        lam = [0.0] * 4
        lam[i] = 1.0
        w = refine.LossWeights(*lam)
        a = refine.loss_gradient_wrt_depth(D, scene, w, h=1e-3)
        n = refine.loss_gradient_wrt_depth(D, scene, w, mode="fd", h=1e-3)
        ok_px = ~a.flagged
        ga, gn = a.terms[k][ok_px], n.terms[k][ok_px]
        floor = 1e-5 * np.abs(n.terms[k]).max()
        errs[k] = float(np.max(np.abs(ga - gn) / np.maximum(np.maximum(np.abs(ga), np.abs(gn)), floor)))
        checked[k] = int(ok_px.sum())
        zero_ops &= all(np.array_equal(g, np.zeros_like(g)) for g in a.operands.values())
        zero_ops &= set(a.operands) == {"teacher", "reference"}
    ok = all(e < 1e-4 for e in errs.values()) and zero_ops
    detail = ", ".join(f"{k} {errs[k]:.1e} ({checked[k]} px)" for k in refine.TERMS)
    acceptance(5, "gradient verification", ok, f"max rel err {detail}; stop-grad zero: {zero_ops}")
    assert ok


def test_06_refinement_convergence(acceptance, two_plane):
    spec, views, _, domains = two_plane
    gt = views[0].depth
    scene = scene_inputs(spec, views, domains)
    cfg = refine.RefineConfig()
    t0 = time.perf_counter()
    res = refine.refine_depth(np.full(gt.shape, gt.mean()), scene, cfg, refine.LossWeights(1, 0, 0, 1e-4))
    dt = time.perf_counter() - t0
    iters = len(res.trace) - 1
    ar = abs_rel(res.depth, gt)
    ratio = res.trace[-1].total / res.trace[0].total
    ok = ar < 0.05 and iters <= 500 and ratio < 0.1 and dt < 60
    acceptance(6, "refinement convergence", ok,
               f"Abs Rel {ar:.4f} after {iters} iterations, loss ratio {ratio:.3f}, {dt:.1f} s")
    assert ok


def coplanar_fraction(spec, view, domains, edge_col):
    fr = []
    for d in domains:
        if abs(d.center[0] - edge_col) <= 2:
            z = synth.scene_depth_at(spec, view.pose, d.members)
            fr.append(np.mean(np.abs(z[1:] - z[0]) <= 0.01 * z[0]))
    return float(np.mean(fr)), len(fr)


def test_07_adaptive_propagation_advantage(acceptance, two_plane):
    spec, views, kp, adaptive = two_plane
    gt = views[0].depth
    fixed = patchmatch.build_support_domains(views[0].image, kp, patchmatch.ZeroOffsetDecoder())
    edge_col = np.argmax(np.diff(gt[0]) != 0) + 0.5
    co_a, n = coplanar_fraction(spec, views[0], adaptive, edge_col)
    co_f, _ = coplanar_fraction(spec, views[0], fixed, edge_col)
    init = np.full(gt.shape, gt.mean())
    w = refine.LossWeights(1, 0, 0, 1e-4)
    ar_a = abs_rel(refine.refine_depth(init, scene_inputs(spec, views, adaptive), weights=w).depth, gt)
    ar_f = abs_rel(refine.refine_depth(init, scene_inputs(spec, views, fixed), weights=w).depth, gt)
    ok = co_a >= co_f and ar_a <= ar_f
    acceptance(7, "adaptive propagation advantage", ok,
               f"co-planar {co_a:.3f} vs {co_f:.3f} ({n} edge keypoints), "
               f"Abs Rel {ar_a:.4f} vs {ar_f:.4f}")
    assert ok


def test_08_teaching_algebra(acceptance):
    rng = np.random.default_rng(8)
    ok = True
    for _ in range(200):
        a, b = rng.uniform(1, 300, (2, 6, 6))
        c = rng.uniform(0.01, 100)
        R = rng.random((6, 6)) > 0.5
        for f in (lambda x, y, e: teaching.cross_teaching_loss(x, y, e).value,
                  lambda x, y, e: teaching.self_teaching_loss(x, y, R, e).value):
            v = f(a, b, teaching.DEFAULT_EPS)
            ok &= f(a, a, teaching.DEFAULT_EPS) == 0.0 and 0.0 <= v < 1.0
            ok &= math.isclose(f(c * a, c * b, 0.0), f(a, b, 0.0), rel_tol=1e-12)
        ok &= teaching.self_teaching_loss(a, b, np.zeros((6, 6), bool)).value == 0.0
    acceptance(8, "teaching-loss algebra", ok, "200 random pairs: zero at equality, in [0,1), "
               "scale invariant at eps=0, all-occluded self-teaching exactly 0")
    assert ok


def test_09_self_teaching_robustness(acceptance):
    t0 = time.perf_counter()
    w_clean = refine.LossWeights(1, 0, 0, 1e-4)
    runs = {0.0: [], 0.002: []}
    for seed in range(5):
        spec = synth.two_plane_scene(seed=seed)
        views = synth.render(spec)
        gt = views[0].depth
        kp = patchmatch.detect_keypoints(views[0].image, 4096, cell=3)
        doms = patchmatch.build_support_domains(views[0].image, kp)
        init = np.full(gt.shape, gt.mean())
        clean = refine.refine_depth(init, scene_inputs(spec, views, doms), weights=w_clean).depth
        perturbed, _ = synth.perturb_views(views, synth.Perturbation("gamma", 1.5, views=(1,)))
        R = teaching.apply_appearance_simulator(
            views[0].image, teaching.AppearanceSimConfig(rng_seed=seed)).occlusion
        scene = scene_inputs(spec, perturbed, doms, reference=clean, occlusion=R)
        for lam in runs:
            d = refine.refine_depth(init, scene, weights=refine.LossWeights(1, 0, lam, 1e-4)).depth
            runs[lam].append(abs_rel(d, gt))
    off, on = np.mean(runs[0.0]), np.mean(runs[0.002])
    ok = on <= off
    acceptance(9, "self-teaching robustness", ok,
               f"mean Abs Rel {on:.4f} (lambda3=0.002) vs {off:.4f} (lambda3=0) over 5 seeds, "
               f"{time.perf_counter() - t0:.0f} s")
    assert ok


def metrics_loop(pred, gt, clip=150.0):
    n = 0
    acc = [0.0] * 5
    for d, g in zip(pred.ravel(), gt.ravel()):
        if not (g > 0 and g <= clip):
            continue
        d = min(max(d, 1e-3), clip)
        n += 1
        acc[0] += abs(d - g) / g
        acc[1] += (d - g) ** 2 / g
        acc[2] += (d - g) ** 2
        acc[3] += (math.log(g) - math.log(d)) ** 2
        acc[4] += max(g / d, d / g) < 1.25
    return [acc[0] / n, acc[1] / n, math.sqrt(acc[2] / n), math.sqrt(acc[3] / n), 100 * acc[4] / n]


def test_10_metrics_oracle(acceptance):
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(100):
        gt = rng.uniform(10, 160, (8, 9))
        pred = gt * np.exp(rng.normal(0, 0.25, gt.shape))
        m = compute_metrics(pred, gt).row()
        ref = metrics_loop(pred, gt)
        worst = max(worst, max(abs(a - b) / max(1.0, abs(b)) for a, b in zip(m, ref)))
    gt = rng.uniform(20, 120, (16, 16))
    m = compute_metrics(1.1 * gt, gt)
    ok = (worst <= 1e-12 and f"{m.abs_rel:.6f}" == "0.100000"
          and abs(m.rmse_log - 0.095310) <= 1e-6 and m.delta == 100.0)
    acceptance(10, "metrics oracle", ok, f"max err {worst:.1e}; 1.1 gt: abs_rel {m.abs_rel:.6f}, "
               f"rmse_log {m.rmse_log:.6f}, delta {m.delta:.0f}%")
    assert ok


def _same_tree(a, b):
    names = sorted(p.name for p in a.iterdir())
    if names != sorted(p.name for p in b.iterdir()):
        return False
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    return not mismatch and not errors


def test_11_cli_determinism(acceptance, tmp_path):
    results = {}
    gt_dir = tmp_path / "render0"
    main(["--seed", "5", "--out", str(gt_dir), "render"])
    gt = str(gt_dir / "view0_depth.pfm")
    img = str(gt_dir / "view0_image.pgm")
    commands = {
        "render": ["render"],
        "sweep": ["sweep"],
        "refine": ["refine"],
        "eval": ["eval", "--pred", gt, "--gt", gt],
        "pointcloud": ["pointcloud", "--depth", gt, "--image", img],
        "simulate": ["simulate"],
    }
    for name, argv in commands.items():
        outs = [tmp_path / f"{name}{i}" for i in (1, 2)]
        codes = [main(["--seed", "5", "--config", str(fixture_path("two_plane")), "--out", str(o), *argv])
                 for o in outs]
        results[name] = codes == [0, 0] and _same_tree(*outs)
    ok = all(results.values())
    acceptance(11, "CLI determinism", ok,
               ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in results.items()))
    assert ok
