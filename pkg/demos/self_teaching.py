"""
Brightness change in one source view biases the photometric loss. Tying the
perturbed branch to the clean-input depth (self-teaching, masked by the
simulator's occlusion mask) pulls it back.

    python demos/self_teaching.py [seed]
"""

import sys

import numpy as np

from endodepth import patchmatch, refine, synth, teaching

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
spec = synth.two_plane_scene(seed=seed)
views = synth.render(spec)
gt = views[0].depth
domains = patchmatch.build_support_domains(views[0].image,
                                           patchmatch.detect_keypoints(views[0].image, 4096, cell=3))
poses = [synth.relative_pose(views, 0, s) for s in (1, 2)]
init = np.full(gt.shape, gt.mean())


def scene(vs, **kw):
    return refine.SceneInputs(vs[0].image, [v.image for v in vs[1:]], poses, spec.intrinsics,
                              domains, **kw)


def abs_rel(D):
    return np.mean(np.abs(D - gt) / gt)


clean = refine.refine_depth(init, scene(views), weights=refine.LossWeights(1, 0, 0, 1e-4)).depth
print(f"clean input: Abs Rel {abs_rel(clean):.4f}")

sim = teaching.apply_appearance_simulator(views[0].image, teaching.AppearanceSimConfig(rng_seed=seed))
print(f"simulator: gamma {sim.params['gamma']:.2f}, {len(sim.params['crops'])} occluders "
      f"covering {(~sim.occlusion).mean():.1%} of the frame")

perturbed, _ = synth.perturb_views(views, synth.Perturbation("gamma", 1.5, views=(1,)))
for lam in (0.0, 0.002, 0.02):
    D = refine.refine_depth(init, scene(perturbed, reference=clean, occlusion=sim.occlusion),
                            weights=refine.LossWeights(1, 0, lam, 1e-4)).depth
    st = teaching.self_teaching_loss(clean, D, sim.occlusion).value
    print(f"gamma 1.5 on view 1, lambda3 = {lam:<6}: Abs Rel {abs_rel(D):.4f}, "
          f"self-teaching term {st:.4f}")
