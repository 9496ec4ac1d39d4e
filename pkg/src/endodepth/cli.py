"""
Command-line front end.

    endodepth [--config PATH] [--seed N] [--out DIR] <subcommand> [options]

Subcommands: render, sweep, refine, eval, pointcloud, simulate. Every run
writes ``effective.cfg`` (the configuration actually used) and ``run.log``
(subcommand, seed, files written) into the output directory. Outputs
depend only on the configuration, the seed and the input files.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import costvolume, patchmatch, refine, synth
from .evalio import formats
from .evalio.config import ConfigError, RunConfig
from .evalio.metrics import METRIC_NAMES, compute_metrics, median_scale
from .geometry import Intrinsics, depth_to_pointcloud
from .photometric import PhotometricConfig
from .teaching import AppearanceSimConfig, apply_appearance_simulator


# -- config -> library objects -----------------------------------------------

def scene_spec(cfg: RunConfig) -> synth.SceneSpec:
    s = cfg.section("scene")
    return synth.SceneSpec(
        geometry=s["geometry"], depth=s["depth"], far_depth=s["far_depth"], edge_x=s["edge_x"],
        sphere_center=s["sphere_center"], sphere_radius=s["sphere_radius"],
        texture=s["texture"], texture_scale=s["texture_scale"], contrast=s["contrast"],
        albedo=s["albedo"], channels=s["channels"],
        intrinsics=Intrinsics.from_fov(s["width"], s["height"], s["hfov_deg"]),
        poses=synth.translated_poses([(x, 0.0, 0.0) for x in s["camera_x"]]),
        rng_seed=cfg["run.seed"], depth_range=s["depth_range"])


def photometric_config(cfg: RunConfig) -> PhotometricConfig:
    s = cfg.section("photometric")
    return PhotometricConfig(s["alpha"], s["ssim_window"], s["c1"], s["c2"])


def depth_range_state(cfg: RunConfig) -> costvolume.DepthRangeState:
    s = cfg.section("costvolume")
    return costvolume.DepthRangeState(s["d_min"], s["d_max"], s["momentum"])


def offset_decoder(cfg: RunConfig):
    s = cfg.section("patchmatch")
    if s["decoder"] == "adaptive":
        return patchmatch.SectorSoftArgmaxDecoder(temperature=s["temperature"],
                                                  max_radius=s["max_radius"],
                                                  include_center=s["include_center"])
    if s["decoder"] == "fixed":
        return patchmatch.ZeroOffsetDecoder()
    raise ConfigError(f"patchmatch.decoder must be 'adaptive' or 'fixed', got {s['decoder']!r}")


def refine_config(cfg: RunConfig) -> refine.RefineConfig:
    s = cfg.section("refine")
    return refine.RefineConfig(levels=s["levels"], factor=s["factor"], iterations=s["iterations"],
                               step_size=s["step_size"], gradient_mode=s["gradient_mode"],
                               fd_step=s["fd_step"], depth_range=cfg["scene.depth_range"])


def loss_weights(cfg: RunConfig) -> refine.LossWeights:
    s = cfg.section("refine")
    return refine.LossWeights(s["lambda_ph"], s["lambda_ct"], s["lambda_st"], s["lambda_es"])


def simulator_config(cfg: RunConfig) -> AppearanceSimConfig:
    s = cfg.section("simulator")
    return AppearanceSimConfig(
        gamma_range=s["gamma_range"], brightness=s["brightness"],
        contrast_range=s["contrast_range"], saturation_range=s["saturation_range"],
        hue=s["hue"], mask_count_range=s["mask_count_range"],
        mask_size_range=s["mask_size_range"], fill=s["fill"], rng_seed=cfg["run.seed"])


# -- helpers ------------------------------------------------------------------

class _Run:
    """Output directory bookkeeping; files are listed in run.log in write order."""

    def __init__(self, out: Path, command: str, cfg: RunConfig):
        self.out = out
        self.log = [f"command = {command}", f"seed = {cfg['run.seed']}",
                    f"config_version = {cfg.version}"]
        out.mkdir(parents=True, exist_ok=True)
        (out / "effective.cfg").write_text(cfg.to_text(), encoding="utf-8")

    def path(self, name: str) -> Path:
        self.log.append(f"wrote {name}")
        return self.out / name

    def note(self, line: str) -> None:
        self.log.append(line)
        print(line)

    def close(self) -> None:
        (self.out / "run.log").write_text("\n".join(self.log) + "\n", encoding="utf-8")


def _image_name(stem: str, img) -> str:
    return f"{stem}.ppm" if np.ndim(img) == 3 and np.shape(img)[2] == 3 else f"{stem}.pgm"


def _sources(views):
    return [v.image for v in views[1:]], [synth.relative_pose(views, 0, s) for s in range(1, len(views))]


def _sweep_depth(cfg, views, spec):
    kind = cfg["costvolume.feature"]
    feats = [costvolume.extract_features(v.image, kind) for v in views]
    _, poses = _sources(views)
    cv = costvolume.build_cost_volume(feats[0], feats[1:], poses, spec.intrinsics,
                                      depth_range_state(cfg), cfg["costvolume.planes"])
    return cv, costvolume.soft_argmin_depth(cv, cfg["costvolume.temperature"])


def _abs_rel(pred, gt) -> float:
    return float(np.mean(np.abs(pred - gt) / gt))


# -- subcommands ------------------------------------------------------------

def cmd_render(args, cfg, run):
    spec = scene_spec(cfg)
    views = synth.render(spec)
    for i, v in enumerate(views):
        formats.write_pnm(run.path(_image_name(f"view{i}_image", v.image)), v.image)
        formats.write_pfm(run.path(f"view{i}_depth.pfm"), v.depth)
    with open(run.path("poses.txt"), "w") as f:
        f.write("# view r11 r12 r13 t1 r21 r22 r23 t2 r31 r32 r33 t3 (world -> camera)\n")
        for i, v in enumerate(views):
            m = v.pose.matrix[:3].ravel()
            f.write(f"{i} " + " ".join(f"{x:.17g}" for x in m) + "\n")
    K = spec.intrinsics
    with open(run.path("intrinsics.txt"), "w") as f:
        f.write(f"fx fy cx cy width height\n{K.fx:.17g} {K.fy:.17g} {K.cx:.17g} {K.cy:.17g} "
                f"{K.width} {K.height}\n")
    run.note(f"rendered {len(views)} views of {spec.geometry} scene")


def cmd_sweep(args, cfg, run):
    spec = scene_spec(cfg)
    views = synth.render(spec)
    if len(views) < 2:
        raise ConfigError("sweep needs at least two cameras (scene.camera_x)")
    cv, depth = _sweep_depth(cfg, views, spec)
    formats.write_pfm(run.path("depth.pfm"), depth)
    gt = views[0].depth
    hard = cv.hard_argmin()
    run.note(f"planes = {len(cv.plane_depths)}")
    run.note(f"soft_argmin_abs_rel = {_abs_rel(depth, gt):.6f}")
    run.note(f"hard_argmin_invalid_pixels = {int((hard < 0).sum())}")


def _scene_inputs(cfg, spec, views, domains):
    sources, poses = _sources(views)
    return refine.SceneInputs(views[0].image, sources, poses, spec.intrinsics, domains,
                              photometric=photometric_config(cfg))


def _domains(cfg, img):
    s = cfg.section("patchmatch")
    kp = patchmatch.detect_keypoints(img, s["target_count"], s["cell"], s["factor"], s["min_grad"])
    if len(kp) == 0:
        raise ConfigError("no keypoints detected; lower patchmatch.cell or patchmatch.factor")
    return kp, patchmatch.build_support_domains(img, kp, offset_decoder(cfg), s["feature"],
                                                s["search_range"])


def cmd_refine(args, cfg, run):
    spec = scene_spec(cfg)
    views = synth.render(spec)
    if len(views) < 2:
        raise ConfigError("refine needs at least two cameras (scene.camera_x)")
    gt = views[0].depth
    kp, domains = _domains(cfg, views[0].image)
    init = cfg["refine.init"]
    if init == "mean_gt":
        D0 = np.full(gt.shape, gt.mean())
    elif init == "sweep":
        D0 = _sweep_depth(cfg, views, spec)[1]
    else:
        raise ConfigError(f"refine.init must be 'mean_gt' or 'sweep', got {init!r}")
    res = refine.refine_depth(D0, _scene_inputs(cfg, spec, views, domains),
                              refine_config(cfg), loss_weights(cfg))
    formats.write_pfm(run.path("depth.pfm"), res.depth)
    refine.write_trace_csv(res.trace, run.path("trace.csv"))
    patchmatch.export_domains(domains, run.path("domains.txt"))
    run.note(f"keypoints = {len(kp)}")
    run.note(f"iterations = {len(res.trace) - 1}")
    run.note(f"loss_initial = {res.trace[0].total:.6g}")
    run.note(f"loss_final = {res.trace[-1].total:.6g}")
    run.note(f"abs_rel_initial = {_abs_rel(D0, gt):.6f}")
    run.note(f"abs_rel_final = {_abs_rel(res.depth, gt):.6f}")


def cmd_eval(args, cfg, run):
    pred = np.asarray(formats.read_pfm(args.pred), dtype=np.float64)
    gt = np.asarray(formats.read_pfm(args.gt), dtype=np.float64)
    e = cfg.section("eval")
    factor = 1.0
    if e["median_scaling"]:
        pred, factor = median_scale(pred, gt)
    m = compute_metrics(pred, gt, e["clip_mm"], e["mask_gt_beyond_clip"])
    with open(run.path("metrics.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([*METRIC_NAMES, "n", "scale"])
        w.writerow([*(f"{v:.6f}" for v in m.row()), m.n, f"{factor:.6f}"])
    header = "  ".join(f"{k:>9}" for k in METRIC_NAMES)
    row = "  ".join(f"{v:9.4f}" for v in m.row())
    table = f"{header}\n{row}\n"
    run.path("metrics.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    run.log.append(f"pixels = {m.n}")
    run.log.append(f"median_scale_factor = {factor:.6f}")


def cmd_pointcloud(args, cfg, run):
    depth = np.asarray(formats.read_pfm(args.depth), dtype=np.float64)
    if depth.ndim != 2:
        raise formats.FormatError(args.depth, "depth map must have one channel")
    H, W = depth.shape
    K = Intrinsics.from_fov(W, H, cfg["scene.hfov_deg"])
    if args.gt is not None:
        depth, factor = median_scale(depth, formats.read_pfm(args.gt))
        run.log.append(f"median_scale_factor = {factor:.6f}")
    color = None
    if args.image is not None:
        color = formats.read_pnm(args.image)
        if color.shape[:2] != depth.shape:
            raise formats.FormatError(args.image, "image size differs from the depth map")
        if color.ndim == 2:
            color = np.repeat(color[..., None], 3, axis=2)
    pts, cols = depth_to_pointcloud(depth, K, color)
    formats.write_ply(run.path("cloud.ply"), pts, cols)
    run.note(f"points = {len(pts)}")


def cmd_simulate(args, cfg, run):
    if args.image is not None:
        img = formats.read_pnm(args.image)
    else:
        img = synth.render(scene_spec(cfg))[0].image
    res = apply_appearance_simulator(img, simulator_config(cfg))
    formats.write_pnm(run.path(_image_name("simulated", res.image)), res.image)
    formats.write_pnm(run.path("mask.pgm"), res.occlusion.astype(np.float64))
    with open(run.path("params.txt"), "w") as f:
        for k, v in res.params.items():
            f.write(f"{k} = {v!r}\n")
    run.note(f"occluded_pixels = {int((~res.occlusion).sum())}")


COMMANDS = {"render": cmd_render, "sweep": cmd_sweep, "refine": cmd_refine, "eval": cmd_eval,
            "pointcloud": cmd_pointcloud, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="endodepth", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("--config", type=Path, help="config file (section.key = value lines)")
    p.add_argument("--seed", type=int, help="overrides run.seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("render", help="render the configured scene: images, depths, poses")
    sub.add_parser("sweep", help="plane-sweep cost volume and soft-argmin depth")
    sub.add_parser("refine", help="coarse-to-fine depth refinement")
    e = sub.add_parser("eval", help="metrics table (text and CSV)")
    e.add_argument("--pred", type=Path, required=True, help="predicted depth (PFM)")
    e.add_argument("--gt", type=Path, required=True, help="ground-truth depth (PFM)")
    c = sub.add_parser("pointcloud", help="depth map -> PLY")
    c.add_argument("--depth", type=Path, required=True, help="depth map (PFM)")
    c.add_argument("--image", type=Path, help="colour source (PPM/PGM)")
    c.add_argument("--gt", type=Path, help="median-scale the depth to this map first")
    s = sub.add_parser("simulate", help="appearance simulator")
    s.add_argument("--image", type=Path, help="input PPM/PGM (default: render view 0)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config) if args.config is not None else RunConfig()
        if args.seed is not None:
            cfg.set("run.seed", str(args.seed), "--seed")
        run = _Run(args.out, args.command, cfg)
        COMMANDS[args.command](args, cfg, run)
        run.close()
    except (ConfigError, formats.FormatError, OSError, ValueError) as e:
        print(f"endodepth: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
