"""
Keypoints and support domains on the two-plane step. Near the depth edge
the adaptive decoder keeps members on the keypoint's own plane, where a
fixed 3x3 ring straddles the step.

    python demos/support_domains.py
"""

import numpy as np

from endodepth import patchmatch, synth

spec = synth.two_plane_scene()
view = synth.render(spec)[0]
kp = patchmatch.detect_keypoints(view.image, 4096, cell=3)
print(f"{len(kp)} keypoints on a {view.image.shape[1]}x{view.image.shape[0]} image")

edge = np.argmax(np.diff(view.depth[0]) != 0) + 0.5
decoders = {"adaptive": patchmatch.SectorSoftArgmaxDecoder(),
            "fixed": patchmatch.ZeroOffsetDecoder()}
for name, dec in decoders.items():
    doms = patchmatch.build_support_domains(view.image, kp, dec)
    same = []
    for d in doms:
        if abs(d.center[0] - edge) <= 2:
            z = synth.scene_depth_at(spec, view.pose, d.members)
            same.append(np.mean(np.abs(z[1:] - z[0]) <= 0.01 * z[0]))
    print(f"{name:>8}: {np.mean(same):.1%} of members share their keypoint's plane "
          f"({len(same)} keypoints within 2 px of the edge)")

# Two domains up close. At the edge, directions that would cross the step
# fold back onto the keypoint. In the interior the keypoint still competes
# in every direction, so only directions with well-correlated texture reach
# away from it; domains are compact everywhere.
doms = patchmatch.build_support_domains(view.image, kp)
dist = np.array([abs(d.center[0] - edge) for d in doms])
for k in (int(np.argmin(dist)), int(np.argmax(dist > 12))):
    d = doms[k]
    print(f"keypoint {d.center.astype(int).tolist()} ({dist[k]:.1f} px from the edge at x = {edge})")
    for m in d.members[1:]:
        z = synth.scene_depth_at(spec, view.pose, m[None])[0]
        print(f"  member ({m[0]:6.2f}, {m[1]:6.2f})  depth {z:.0f} mm")
