"""Scenario configuration: TOML with one table per section, validated on load.

Unknown sections or keys are rejected, and every validation failure names
the offending ``section.key``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .balloon_filter import FilterConfig
from .height_filter import HeightFilterConfig
from .mission import ArenaConfig, MissionConfig
from .perception import DetectorConfig
from .simulator import CameraConfig, PlantConfig, SensorNoiseConfig, TentacleRig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BalloonConfig:
    count: int = 5
    positions: tuple = ()
    height: float = 2.8
    radius: float = 0.3
    min_separation: float = 8.0
    edge_inset: float = 5.0
    center_clearance: float = 8.0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if not (self.radius > 0 and self.height > 0):
            raise ValueError("radius and height must be positive")
        if self.min_separation < 0 or self.edge_inset < 0 or self.center_clearance < 0:
            raise ValueError("placement distances must be non-negative")
        for p in self.positions:
            if len(p) != 2:
                raise ValueError("positions must be [x, y] pairs")


@dataclass(frozen=True)
class LimitsConfig:
    xy_v: float = 5.0
    xy_a: float = 4.0
    xy_j: float = 5.0
    z_v: float = 1.0
    z_a: float = 10.0
    z_j: float = 50.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")


@dataclass(frozen=True)
class ControlConfig:
    kp_yaw: float = 1.0
    lead_xy: float = 0.15
    lead_z: float = 0.2

    def __post_init__(self):
        if not self.kp_yaw > 0:
            raise ValueError("kp_yaw must be positive")
        if self.lead_xy < 0 or self.lead_z < 0:
            raise ValueError("lead_xy and lead_z must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    time_limit: float = 900.0
    seed: int = 1
    failure_model: bool = False
    start_x: float = -40.0
    start_y: float = 0.0
    start_yaw_deg: float = 0.0

    def __post_init__(self):
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"


SECTIONS = {
    "arena": ArenaConfig,
    "balloons": BalloonConfig,
    "noise": SensorNoiseConfig,
    "rig": TentacleRig,
    "plant": PlantConfig,
    "camera": CameraConfig,
    "perception": DetectorConfig,
    "filter": FilterConfig,
    "height": HeightFilterConfig,
    "mission": MissionConfig,
    "control": ControlConfig,
    "limits": LimitsConfig,
    "sim": SimConfig,
    "output": OutputConfig,
}


@dataclass(frozen=True)
class ScenarioConfig:
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    balloons: BalloonConfig = field(default_factory=BalloonConfig)
    noise: SensorNoiseConfig = field(default_factory=SensorNoiseConfig)
    rig: TentacleRig = field(default_factory=TentacleRig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    perception: DetectorConfig = field(default_factory=DetectorConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    height: HeightFilterConfig = field(default_factory=HeightFilterConfig)
    mission: MissionConfig = field(default_factory=MissionConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: _plain(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
        return out


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _coerce(key: str, value, default):
    """Match a TOML value to the type of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected an array")
        return tuple(tuple(x) if isinstance(x, list) else x for x in value)
    return value


def _build_section(name: str, cls, values: dict):
    defaults = {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in values.items():
        key = f"{name}.{k}"
        if k not in defaults:
            raise ConfigError(f"unknown key '{key}'")
        kwargs[k] = _coerce(key, v, defaults[k])
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        bad = next((k for k in defaults if k in msg), None)
        where = f"{name}.{bad}" if bad else name
        raise ConfigError(f"{where}: {msg}") from exc


def from_dict(data: dict) -> ScenarioConfig:
    sections = {}
    for name, values in data.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section '{name}'")
        if not isinstance(values, dict):
            raise ConfigError(f"'{name}' must be a table")
        sections[name] = _build_section(name, SECTIONS[name], values)
    cfg = ScenarioConfig(**sections)
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: ScenarioConfig) -> None:
    lo, hi = cfg.filter.corridor
    if not lo <= cfg.balloons.height <= hi:
        raise ConfigError("balloons.height: outside the filter height corridor")
    try:
        cfg.camera.intrinsics()
    except ValueError as exc:
        raise ConfigError(f"camera: {exc}") from exc


def load(path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_dict(data)


def override(cfg: ScenarioConfig, **dotted) -> ScenarioConfig:
    """Return a copy with ``section__key=value`` overrides applied and validated."""
    data = cfg.to_dict()
    for k, v in dotted.items():
        sec, _, key = k.partition("__")
        if sec not in data or key not in data[sec]:
            raise ConfigError(f"unknown key '{sec}.{key}'")
        data[sec][key] = _plain(v)
    return from_dict(data)


def default_config_path() -> Path:
    return Path(__file__).resolve().parents[2] / "configs" / "grand_challenge.toml"
