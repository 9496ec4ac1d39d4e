"""
Multi-frame self-supervised depth machinery at desk scale: pinhole
geometry and warping, photometric errors, plane-sweep cost volumes,
patchmatch support domains with adaptive propagation, teaching-consistency
losses with an appearance simulator, a gradient-based depth refiner,
procedural test scenes, and evaluation I/O.
"""

from importlib import resources

from . import costvolume, geometry, patchmatch, photometric, refine, synth, teaching
from . import evalio

__version__ = "0.1.0"


def fixture_path(name: str):
    """Path of a bundled ``.cfg`` fixture, e.g. ``fixture_path("two_plane")``."""
    p = resources.files(__name__) / "fixtures" / f"{name}.cfg"
    if not p.is_file():
        raise FileNotFoundError(f"no bundled fixture named {name!r}")
    return p


__all__ = ["costvolume", "evalio", "fixture_path", "geometry", "patchmatch", "photometric",
           "refine", "synth", "teaching"]
