"""
Run configuration: UTF-8 text, one ``section.key = value`` per line, ``#``
starts a comment. Every key has a typed default in SCHEMA; unknown keys,
duplicates and unparsable values are rejected with ``file:line: key``
diagnostics. ``RunConfig.to_text`` writes the effective configuration in
the same format, so a run can be replayed from its echo.
"""

from __future__ import annotations

from dataclasses import dataclass, field

CONFIG_VERSION = "1"


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    return tuple(float(v) for v in s.split(","))


def _ints(s: str) -> tuple:
    return tuple(int(v) for v in s.split(","))


def _auto_float(s: str):
    return None if s.strip() == "auto" else float(s)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if v is None:
        return "auto"
    return repr(v) if isinstance(v, float) else str(v)


# section.key -> (default, parser)
SCHEMA = {
    "run.version": (CONFIG_VERSION, str),
    "run.seed": (0, int),

    "scene.geometry": ("two_plane", str),
    "scene.width": (64, int),
    "scene.height": (64, int),
    "scene.hfov_deg": (65.0, float),
    "scene.depth": (60.0, float),
    "scene.far_depth": (90.0, float),
    "scene.edge_x": (0.0, float),
    "scene.sphere_center": ((0.0, 0.0, 50.0), _floats),
    "scene.sphere_radius": (8.0, float),
    "scene.texture": ("sinusoid", str),
    "scene.texture_scale": (6.0, float),
    "scene.contrast": (0.3, float),
    "scene.albedo": ((0.62, 0.38, 0.5, 0.5), _floats),
    "scene.channels": (1, int),
    "scene.camera_x": ((0.0, -5.0, 5.0), _floats),
    "scene.depth_range": ((40.0, 150.0), _floats),

    "photometric.alpha": (0.85, float),
    "photometric.ssim_window": (3, int),
    "photometric.c1": (1e-4, float),
    "photometric.c2": (9e-4, float),

    "costvolume.planes": (32, int),
    "costvolume.d_min": (50.0, float),
    "costvolume.d_max": (150.0, float),
    "costvolume.momentum": (0.99, float),
    "costvolume.feature": ("patch3", str),
    "costvolume.temperature": (0.002, float),

    "patchmatch.decoder": ("adaptive", str),
    "patchmatch.feature": ("patch3n", str),
    "patchmatch.cell": (3, int),
    "patchmatch.target_count": (4096, int),
    "patchmatch.factor": (1.5, float),
    "patchmatch.min_grad": (1e-3, float),
    "patchmatch.search_range": (8, int),
    "patchmatch.max_radius": (6.0, float),
    "patchmatch.temperature": (None, _auto_float),
    "patchmatch.include_center": (True, _bool),

    "refine.init": ("mean_gt", str),
    "refine.levels": (3, int),
    "refine.factor": (4, int),
    "refine.iterations": ((50, 100, 350), _ints),
    "refine.step_size": ((3e4, 3e5, 3e5), _floats),
    "refine.gradient_mode": ("analytic", str),
    "refine.fd_step": (1e-3, float),
    "refine.lambda_ph": (1.0, float),
    "refine.lambda_ct": (0.02, float),
    "refine.lambda_st": (0.002, float),
    "refine.lambda_es": (0.0001, float),

    "simulator.gamma_range": ((0.5, 2.0), _floats),
    "simulator.brightness": (0.2, float),
    "simulator.contrast_range": ((0.8, 1.25), _floats),
    "simulator.saturation_range": ((0.8, 1.2), _floats),
    "simulator.hue": (0.05, float),
    "simulator.mask_count_range": ((1, 3), _ints),
    "simulator.mask_size_range": ((8, 32), _ints),
    "simulator.fill": (0.0, float),

    "eval.clip_mm": (150.0, float),
    "eval.median_scaling": (True, _bool),
    "eval.mask_gt_beyond_clip": (True, _bool),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (d, _) in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name: str) -> dict:
        p = name + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    @property
    def version(self) -> str:
        return self.values["run.version"]

    def set(self, key: str, raw: str, where: str = "<override>") -> None:
        if key not in SCHEMA:
            raise ConfigError(f"{where}: unknown key '{key}'")
        parser = SCHEMA[key][1]
        try:
            self.values[key] = parser(raw)
        except ValueError as e:
            raise ConfigError(f"{where}: bad value for '{key}': {e}") from None

    def to_text(self) -> str:
        lines = [f"# effective configuration (format version {self.version})"]
        section = None
        for k in SCHEMA:
            s = k.split(".", 1)[0]
            if s != section:
                if section is not None:
                    lines.append("")
                section = s
            lines.append(f"{k} = {_fmt(self.values[k])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str, path: str = "<string>") -> "RunConfig":
        cfg = cls()
        seen = {}
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            where = f"{path}:{n}"
            if "=" not in line:
                raise ConfigError(f"{where}: expected 'section.key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key.count(".") != 1:
                raise ConfigError(f"{where}: key '{key}' must look like section.key")
            if key in seen:
                raise ConfigError(f"{where}: duplicate key '{key}' (first set on line {seen[key]})")
            seen[key] = n
            cfg.set(key, value, where)
        if cfg.version != CONFIG_VERSION:
            raise ConfigError(f"{path}: unsupported config version '{cfg.version}'")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as f:
                text = f.read()
        except UnicodeDecodeError as e:
            raise ConfigError(f"{path}: not valid UTF-8 ({e.reason} at byte {e.start})") from None
        return cls.parse(text, str(path))
