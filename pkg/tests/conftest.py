import numpy as np
import pytest

from endodepth import patchmatch, refine, synth

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one acceptance outcome: ``acceptance(number, title, ok, detail)``."""

    def record(number, title, ok, detail=""):
        _ACCEPTANCE.append((number, title, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_ACCEPTANCE):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}: {detail}")


@pytest.fixture(scope="session")
def plane_views():
    spec = synth.plane_two_view()
    return spec, synth.render(spec)


@pytest.fixture(scope="session")
def two_plane():
    """Fixture scene with adaptive domains built on the target view."""
    spec = synth.two_plane_scene()
    views = synth.render(spec)
    kp = patchmatch.detect_keypoints(views[0].image, 4096, cell=3)
    domains = patchmatch.build_support_domains(views[0].image, kp)
    return spec, views, kp, domains


def scene_inputs(spec, views, domains, **kw):
    sources = [v.image for v in views[1:]]
    poses = [synth.relative_pose(views, 0, s) for s in range(1, len(views))]
    return refine.SceneInputs(views[0].image, sources, poses, spec.intrinsics, domains, **kw)


def random_pose(rng, rot=0.05, trans=5.0):
    from endodepth.geometry import RigidTransform
    return RigidTransform.from_axis_angle(rng.normal(0, rot, 3), rng.normal(0, trans, 3))


def abs_rel(pred, gt):
    return float(np.mean(np.abs(pred - gt) / gt))
