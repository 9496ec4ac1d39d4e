"""
Score a depth map with and without median scaling, then write it out as
PFM and a coloured PLY point cloud.

    python demos/evaluate_and_export.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from endodepth import synth
from endodepth.evalio import compute_metrics, evaluate, read_ply, write_pfm, write_ply
from endodepth.evalio.metrics import METRIC_NAMES
from endodepth.geometry import depth_to_pointcloud

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

spec = synth.two_plane_scene(channels=3)
view = synth.render(spec)[0]
gt = view.depth
rng = np.random.default_rng(0)
# A monocular-style prediction: right shape, wrong scale, a little noise.
pred = 0.7 * gt * np.exp(rng.normal(0, 0.03, gt.shape))

print("             " + "  ".join(f"{k:>8}" for k in METRIC_NAMES))
for label, m in (("raw", compute_metrics(pred, gt)), ("median-scaled", evaluate(pred, gt))):
    print(f"{label:>13}" + "  ".join(f"{v:8.4f}" for v in m.row()))

write_pfm(out / "pred.pfm", pred.astype(np.float32))
pts, cols = depth_to_pointcloud(gt, spec.intrinsics, view.image)
write_ply(out / "scene.ply", pts, cols)
P, C = read_ply(out / "scene.ply")
print(f"wrote {out / 'pred.pfm'} and {len(P)} points to {out / 'scene.ply'} "
      f"(round trip exact: {np.array_equal(P, pts)})")
