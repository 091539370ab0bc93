"""Scenario configuration: one JSON document, defaults shipped as ``default.json``."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from ..controller import COMPENSATION_MODES, Gains
from ..dynamics import DisturbanceSpec, VehicleParams
from .reference import ReferenceConfig

CONTROLLER_MODES = ("fixed-low", "fixed-high", "aware", "gp-comp-aware", "gp-comp-online")
GP_MODES = ("gp-comp-aware", "gp-comp-online")


class ConfigError(ValueError):
    pass


@dataclass
class ControllerConfig:
    mode: str = "fixed-low"
    compensation: str = "force-aug"
    low_scale: float = 1.0
    high_scale: float = 1.8
    trans_scale: float = 1.0
    rot_scale: float = 1.0
    kp: float = 6.0
    kv: float = 4.0
    kR: float = 6.5
    kw: float = 0.55

    def scale_for_mode(self) -> float:
        if self.mode == "fixed-low":
            return self.low_scale
        if self.mode == "fixed-high":
            return self.high_scale
        return self.trans_scale

    def gains(self, trans_scale: float | None = None) -> Gains:
        return Gains(self.kp, self.kv, self.kR, self.kw,
                     self.scale_for_mode() if trans_scale is None else trans_scale, self.rot_scale)


@dataclass
class OnlineConfig:
    update_interval: float = 0.05
    budget: int = 350
    signal_std: float = 0.05
    noise_std: float = 0.01


@dataclass
class GpConfig:
    normalize_by_dist: bool = True
    decimation: int = 25
    label_noise_std: float = 1e-3
    collect_scales: list = field(default_factory=lambda: [1.0, 3.0])
    beta: float = 2.0
    gate_center: float = 0.25
    gate_slope: float = 20.0
    saturation: list = field(default_factory=lambda: [6.0, 6.0, 6.0, 1.0, 1.0, 1.0])
    filter_tau: float = 0.02
    oracle_period: float = 0.02
    restarts: int = 4
    max_iter: int = 200
    hyper_subset: int = 400
    lengthscale_bounds: list = field(default_factory=lambda: [1e-2, 1e3])
    dataset_path: str | None = None
    model_path: str | None = None
    online: OnlineConfig = field(default_factory=OnlineConfig)


@dataclass
class SchedulerConfig:
    eps: float = 0.1
    grid_min: float = 1.0
    grid_max: float = 2.5
    grid_step: float = 0.1
    c_t1: float = 1.0
    c_r1: float = 1.0
    strict: bool = False
    tube_spacing: float = 0.05
    tube_pos: float = 0.2
    tube_vel: float = 0.5

    def grid(self) -> list[float]:
        n = int(round((self.grid_max - self.grid_min) / self.grid_step)) + 1
        return [round(self.grid_min + i * self.grid_step, 10) for i in range(n)]


@dataclass
class SimulationConfig:
    horizon: float = 20.0
    dt: float = 1e-3
    seed: int = 0
    transient_end: float = 3.0
    start: str = "rest"  # "rest" or "reference"
    position_offset: list = field(default_factory=lambda: [0.0, 0.0, -0.4])
    divergence_bound: float = 100.0  # m of position error

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class OutputConfig:
    dir: str = "out"


@dataclass
class ScenarioConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    disturbance: DisturbanceSpec = field(default_factory=DisturbanceSpec)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    gp: GpConfig = field(default_factory=GpConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def dist_scale(self) -> float:
        return self.disturbance.scale

    def replace(self, **overrides) -> ScenarioConfig:
        """Copy with dotted-path overrides, e.g. ``replace(**{"controller.mode": "aware"})``."""
        d = to_dict(self)
        for key, value in overrides.items():
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return from_dict(d)

    def validate(self):
        sim = self.simulation
        if not sim.horizon > 0 or not sim.dt > 0:
            raise ConfigError("horizon and dt must be positive")
        if not self.scheduler.eps > 0:
            raise ConfigError("eps must be positive")
        if self.controller.mode not in CONTROLLER_MODES:
            raise ConfigError(f"unknown controller mode {self.controller.mode!r}")
        if self.controller.compensation not in COMPENSATION_MODES:
            raise ConfigError(f"unknown compensation mode {self.controller.compensation!r}")
        if sim.start not in ("rest", "reference"):
            raise ConfigError(f"unknown start {sim.start!r}")
        if self.gp.decimation < 1 or self.gp.online.budget < 1:
            raise ConfigError("decimation and online budget must be >= 1")
        if not sim.divergence_bound > 0:
            raise ConfigError("divergence bound must be positive")
        if not 0 < sim.transient_end < sim.horizon:
            raise ConfigError("transient window must end inside the horizon")
        return self


def _jsonable(v):
    if isinstance(v, np.ndarray):
        if v.ndim == 2 and np.allclose(v, np.diag(np.diag(v))):
            return [float(x) for x in np.diag(v)]
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def to_dict(cfg: ScenarioConfig) -> dict:
    out = {}
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        if f.name == "vehicle":
            d = {"m": section.m, "J": section.J, "g": section.g,
                 "T_max": section.T_max, "tau_max": section.tau_max}
        else:
            d = asdict(section)
        out[f.name] = json.loads(json.dumps(d, default=_jsonable))
    return out


def _build(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] section: {exc}") from exc


def from_dict(d: dict) -> ScenarioConfig:
    d = copy.deepcopy(d)
    sections = {f.name for f in fields(ScenarioConfig)}
    unknown = set(d) - sections
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    gp = dict(d.get("gp", {}))
    online = _build(OnlineConfig, gp.pop("online", {}), "gp.online")
    cfg = ScenarioConfig(
        vehicle=_build(VehicleParams, d.get("vehicle", {}), "vehicle"),
        disturbance=_build(DisturbanceSpec, d.get("disturbance", {}), "disturbance"),
        reference=_build(ReferenceConfig, d.get("reference", {}), "reference"),
        controller=_build(ControllerConfig, d.get("controller", {}), "controller"),
        gp=_build(GpConfig, {**gp, "online": online}, "gp"),
        scheduler=_build(SchedulerConfig, d.get("scheduler", {}), "scheduler"),
        simulation=_build(SimulationConfig, d.get("simulation", {}), "simulation"),
        output=_build(OutputConfig, d.get("output", {}), "output"),
    )
    return cfg.validate()


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def default_dict() -> dict:
    text = resources.files("quadaware").joinpath("default.json").read_text()
    return json.loads(text)


def load_config(path: str | Path | None = None) -> ScenarioConfig:
    """Defaults from ``default.json``, overlaid with the document at ``path``."""
    data = default_dict()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        data = _merge(data, user)
    return from_dict(data)
