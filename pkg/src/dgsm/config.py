"""Pipeline configuration: dataclass defaults, TOML load/emit, validation."""

import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .shadows import FootprintMode
from .transmittance import AbsorptionKind


class ConfigError(ValueError):
    pass


@dataclass
class InputConfig:
    scene: str = ""  # PLY paths; all empty means the bundled synthetic room
    avatar: str = ""
    object: str = ""


@dataclass
class LightConfig:
    k: int = 1
    min_separation: float = 1.0
    roi_radius: float = 4.0
    peak_radius: float = 0.5
    view_count: int = 6


@dataclass
class AtlasConfig:
    H: int = 512
    W: int = 512
    K: int = 64
    t_max: object = "auto"  # metres, or "auto" = far ROI corner + 0.5
    layout: str = "oct"  # "cube" uses faces of about the same texel count as H x W
    k_sigma: float = 3.0
    roi_radius: float = 2.0
    roi_cull: bool = True
    tile_cull: bool = True
    extend_floor: bool = True


@dataclass
class AbsorptionConfig:
    mode: str = "traceavg"
    kappa: float = 1.0


@dataclass
class FootprintConfig:
    mode: str = "mc:32"


@dataclass
class ProbeConfig:
    face_res: int = 64
    degree: int = 3
    lam: object = "auto"  # or a float >= 0
    q: float = 1.0
    n_theta: int = 64
    n_phi: int = 128
    s_max: float = 4.0
    eps: float = 1e-6
    gamma: float = 1.0
    relight_first: bool = True


@dataclass
class EvalConfig:
    tau: float = 0.1
    boundary_px: int = 2
    radius: float = 1.5


@dataclass
class PipelineConfig:
    seed: int = 0
    workers: int = 0  # 0 = numba default
    inputs: InputConfig = field(default_factory=InputConfig)
    lights: LightConfig = field(default_factory=LightConfig)
    atlas: AtlasConfig = field(default_factory=AtlasConfig)
    absorption: AbsorptionConfig = field(default_factory=AbsorptionConfig)
    footprint: FootprintConfig = field(default_factory=FootprintConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        checks = [
            (self.seed >= 0, "seed must be >= 0"),
            (self.workers >= 0, "workers must be >= 0"),
            (self.lights.k >= 1, "lights.k must be >= 1"),
            (self.lights.min_separation >= 0, "lights.min_separation must be >= 0"),
            (self.lights.roi_radius > 0, "lights.roi_radius must be > 0"),
            (self.lights.peak_radius > 0, "lights.peak_radius must be > 0"),
            (self.lights.view_count >= 2, "lights.view_count must be >= 2"),
            (min(self.atlas.H, self.atlas.W, self.atlas.K) >= 1, "atlas H, W, K must be >= 1"),
            (self.atlas.t_max == "auto" or _num(self.atlas.t_max) > 0, "atlas.t_max must be > 0 or 'auto'"),
            (self.atlas.layout in ("oct", "cube"), "atlas.layout must be 'oct' or 'cube'"),
            (self.atlas.k_sigma > 0, "atlas.k_sigma must be > 0"),
            (self.atlas.roi_radius > 0, "atlas.roi_radius must be > 0"),
            (self.absorption.mode in {k.value for k in AbsorptionKind},
             f"absorption.mode must be one of {[k.value for k in AbsorptionKind]}"),
            (self.absorption.kappa > 0, "absorption.kappa must be > 0"),
            (self.probe.face_res >= 4, "probe.face_res must be >= 4"),
            (0 <= self.probe.degree <= 3, "probe.degree must be in [0, 3]"),
            (self.probe.lam == "auto" or _num(self.probe.lam) >= 0, "probe.lam must be >= 0 or 'auto'"),
            (self.probe.q >= 0, "probe.q must be >= 0"),
            (min(self.probe.n_theta, self.probe.n_phi) >= 1, "probe grid must be non-empty"),
            (self.probe.s_max > 0, "probe.s_max must be > 0"),
            (self.probe.eps > 0, "probe.eps must be > 0"),
            (self.probe.gamma >= 0, "probe.gamma must be >= 0"),
            (0 < self.eval.tau < 1, "eval.tau must be in (0, 1)"),
            (self.eval.boundary_px >= 0, "eval.boundary_px must be >= 0"),
            (self.eval.radius > 0, "eval.radius must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            FootprintMode.parse(self.footprint.mode)
        except ValueError as exc:
            raise ConfigError(f"footprint.mode: {exc}") from None
        return self


def _num(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        return float("nan")
    return float(v)


def _from_dict(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{path or 'root'}' must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(path + k for k in unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        default = getattr(defaults, name)
        if is_dataclass(default):
            kwargs[name] = _from_dict(type(default), value, f"{path}{name}.")
        else:
            kwargs[name] = _coerce(value, default, path + name)
    return cls(**kwargs)


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if default == "auto":
        if value != "auto" and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"{key} must be a number or 'auto'")
        return value if value == "auto" else float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def from_dict(data):
    return _from_dict(PipelineConfig, data).validate()


def loads(text):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    return from_dict(data)


def load(path):
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    return from_dict(data)


def to_dict(cfg):
    return asdict(cfg)


def dumps(cfg):
    return tomli_w.dumps(to_dict(cfg))


def override(cfg, section, **values):
    """Copy of ``cfg`` with fields of one section (or the root if None) replaced."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    if section is None:
        return replace(cfg, **values).validate()
    return replace(cfg, **{section: replace(getattr(cfg, section), **values)}).validate()
