"""Experiment configuration: nested dataclasses loaded from YAML with strict key checking."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .controller import ControllerParams
from .kinematics import Attachment, RobotModel
from .sensing import DepthSensorModel, ProbeSensorModel
from .worldmap import OccupancyParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ControlConfig:
    rate_hz: float = 100.0
    kappa: float = 6.0
    lambda_c: float = 1.2
    lambda_s: float = 5e3
    eta: float = 1.0
    alpha: float = 0.7
    d_safe_base: float = 0.5
    d_safe_probe: float = 0.1
    line_clearance: float = 0.075
    base_box_margin: float = 0.5
    probe_box_margin: float = 0.1
    joint_position_limits: bool = True
    qp_tol: float = 1e-8
    qp_max_iter: int = 200

    def check(self):
        _positive(self, "rate_hz", "kappa", "lambda_c", "lambda_s", "qp_tol", "qp_max_iter")
        _nonneg(self, "eta", "d_safe_base", "d_safe_probe", "line_clearance", "base_box_margin", "probe_box_margin")
        _open_unit(self, "alpha")


@dataclass(frozen=True)
class PlannerConfig:
    beta: float = 0.75
    candidates: int = 500
    stop_gain: float = 1.0
    err_threshold: float = 1e-3
    stall_window_s: float = 4.0
    stall_tol: float = 1e-4
    coverage_sign: int = 1  # +1: uncovered occupied voxels carry +ln 2; -1: literal ln 0.5
    setpoint_timeout_s: float = 8.0
    tabu_radius: float = 0.1
    reach_radius: float = 0.8
    survey: bool = True
    survey_steps: int = 4

    def check(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("planner.beta must lie in [0, 1]")
        if self.coverage_sign not in (1, -1):
            raise ConfigError("planner.coverage_sign must be 1 or -1")
        _positive(self, "candidates", "err_threshold", "stall_window_s", "stall_tol", "setpoint_timeout_s", "reach_radius")
        _nonneg(self, "tabu_radius", "survey_steps")


@dataclass(frozen=True)
class SensingConfig:
    h_fov_deg: float = 60.0
    v_fov_deg: float = 45.0
    max_range: float = 3.0
    min_range: float = 0.3
    rays: int = 200
    probe_radius: float = 0.4
    probe_rays: int = 200
    scan_every: int = 10
    scan_rays: int = 600
    range_noise: float = 0.002
    dropout: float = 0.0
    min_range_fault: bool = False
    coverage_rays: int = 200

    def check(self):
        _positive(self, "max_range", "min_range", "rays", "probe_radius", "probe_rays", "scan_every", "scan_rays", "coverage_rays")
        _nonneg(self, "range_noise")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("sensing.dropout must lie in [0, 1)")
        if self.min_range >= self.max_range:
            raise ConfigError("sensing.min_range must be below max_range")
        for k in ("h_fov_deg", "v_fov_deg"):
            if not 0.0 <= getattr(self, k) < 180.0:
                raise ConfigError(f"sensing.{k} must lie in [0, 180)")

    def depth(self) -> DepthSensorModel:
        return DepthSensorModel(self.h_fov_deg, self.v_fov_deg, self.max_range, self.min_range, self.rays)

    def probe(self) -> ProbeSensorModel:
        return ProbeSensorModel(self.probe_radius, self.probe_rays)


@dataclass(frozen=True)
class MapConfig:
    resolution: float = 0.05
    p_hit: float = 0.7
    p_miss: float = 0.4
    l_min: float = -2.0
    l_max: float = 3.5
    p_occ_min: float = 0.7
    p_free_max: float = 0.3

    def check(self):
        _positive(self, "resolution")
        _open_unit(self, "p_hit", "p_miss", "p_occ_min", "p_free_max")
        if self.l_min >= self.l_max:
            raise ConfigError("map.l_min must be below map.l_max")

    def occupancy(self) -> OccupancyParams:
        return OccupancyParams(self.p_hit, self.p_miss, self.l_min, self.l_max, self.p_occ_min, self.p_free_max)


@dataclass(frozen=True)
class EstimationConfig:
    min_points: int = 10
    inlier_threshold: float = 0.02
    ransac_iterations: int = 100
    buffer_points: int = 1500
    association_gate: float = 0.06

    def check(self):
        _positive(self, "min_points", "inlier_threshold", "ransac_iterations", "buffer_points", "association_gate")


@dataclass(frozen=True)
class PipeConfig:
    axis: str = "z"
    offset: tuple = (0.25, 0.75)
    radius: float = 0.05

    def check(self):
        if self.axis not in ("x", "y", "z"):
            raise ConfigError("pipe axis must be one of x, y, z")
        if len(self.offset) != 2:
            raise ConfigError("pipe offset needs the two coordinates across the axis")
        _positive(self, "radius")


@dataclass(frozen=True)
class SceneConfig:
    side: float = 1.5
    n_pipes: int = 1
    pipes: Optional[tuple] = None  # explicit pipes; random placement when None
    pipe_radius: float = 0.05
    pipe_perturbation_std: float = 0.0
    start: tuple = (0.75, 0.75, 0.0, 0.0, 1.3, -2.5, 0.0, 0.9, 0.0)

    def check(self):
        _positive(self, "side", "pipe_radius")
        _nonneg(self, "pipe_perturbation_std")
        if not 0 <= self.n_pipes <= 3:
            raise ConfigError("scene.n_pipes must be between 0 and 3")
        for p in self.pipes or ():
            p.check()


@dataclass(frozen=True)
class RobotConfig:
    base_height: float = 0.12
    mount_height: float = 0.25
    joint_offsets: tuple = ((0.0, 0.0, 0.10), (0.0, 0.0, 0.0), (0.45, 0.0, 0.0), (0.20, 0.0, 0.0), (0.20, 0.0, 0.0), (0.0, 0.0, 0.0))
    joint_axes: tuple = ((0, 0, 1), (0, -1, 0), (0, -1, 0), (1, 0, 0), (0, -1, 0), (1, 0, 0))
    tool_offset: tuple = (0.10, 0.0, 0.0)
    tool_axis: tuple = (1.0, 0.0, 0.0)
    velocity_limits: tuple = (0.4, 0.4, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    joint_limit: float = 2.0 * math.pi
    elbow_joint: int = 2

    def check(self):
        if len(self.joint_offsets) != len(self.joint_axes) or not self.joint_offsets:
            raise ConfigError("robot.joint_offsets and robot.joint_axes need one entry per joint")
        if len(self.velocity_limits) != 3 + len(self.joint_offsets):
            raise ConfigError("robot.velocity_limits needs one entry per configuration coordinate")
        if min(self.velocity_limits) <= 0:
            raise ConfigError("robot.velocity_limits must be positive")

    def model(self) -> RobotModel:
        n_arm = len(self.joint_offsets)
        mount = np.eye(4)
        mount[2, 3] = self.mount_height
        return RobotModel(
            joint_offsets=np.array(self.joint_offsets, dtype=float),
            joint_axes=np.array(self.joint_axes, dtype=float),
            mount=mount,
            tool_offset=np.array(self.tool_offset, dtype=float),
            tool_axis=np.array(self.tool_axis, dtype=float),
            velocity_limits=np.array(self.velocity_limits, dtype=float),
            joint_limits=np.array([[-self.joint_limit, self.joint_limit]] * n_arm),
            attachments={
                "base_center": Attachment(-1, (0.0, 0.0, self.base_height)),
                "probe": Attachment(n_arm, (0.0, 0.0, 0.0)),
                "elbow": Attachment(self.elbow_joint, (0.0, 0.0, 0.0)),
            },
        )


@dataclass(frozen=True)
class SimConfig:
    max_time_s: float = 60.0
    estop_abort_s: float = 1.0

    def check(self):
        _positive(self, "max_time_s", "estop_abort_s")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    control: ControlConfig = field(default_factory=ControlConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sensing: SensingConfig = field(default_factory=SensingConfig)
    map: MapConfig = field(default_factory=MapConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    robot: RobotConfig = field(default_factory=RobotConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def check(self) -> "ExperimentConfig":
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "check"):
                v.check()
        if len(self.scene.start) != 3 + len(self.robot.joint_offsets):
            raise ConfigError("scene.start must have one entry per configuration coordinate")
        return self

    def controller_params(self) -> ControllerParams:
        c = self.control
        side = self.scene.side
        return ControllerParams(
            kappa=c.kappa,
            lambda_c=c.lambda_c,
            lambda_s=c.lambda_s,
            eta=c.eta,
            alpha=c.alpha,
            d_safe_base=c.d_safe_base,
            d_safe_probe=c.d_safe_probe,
            line_clearance=c.line_clearance,
            workspace_lo=(0.0, 0.0, 0.0),
            workspace_hi=(side, side, side),
            base_box_margin=c.base_box_margin,
            probe_box_margin=c.probe_box_margin,
            joint_position_limits=c.joint_position_limits,
            tol=c.qp_tol,
            max_iter=c.qp_max_iter,
        )

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with some sections' fields overridden, e.g. ``replace(sim={"max_time_s": 5})``."""
        return from_dict(merge(to_dict(self), sections))


def _positive(obj, *names):
    for n in names:
        if not getattr(obj, n) > 0:
            raise ConfigError(f"{type(obj).__name__}.{n} must be positive")


def _nonneg(obj, *names):
    for n in names:
        if getattr(obj, n) < 0:
            raise ConfigError(f"{type(obj).__name__}.{n} must be non-negative")


def _open_unit(obj, *names):
    for n in names:
        if not 0.0 < getattr(obj, n) < 1.0:
            raise ConfigError(f"{type(obj).__name__}.{n} must lie in (0, 1)")


def _freeze(v):
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    return v


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get((cls, name))
        path = f"{where}.{name}" if where else name
        if sub is not None:
            kwargs[name] = _build(sub, value, path)
        elif cls is SceneConfig and name == "pipes" and value is not None:
            if not isinstance(value, list):
                raise ConfigError("scene.pipes must be a list")
            kwargs[name] = tuple(_build(PipeConfig, p, f"{path}[{i}]") for i, p in enumerate(value))
        else:
            kwargs[name] = _freeze(value)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


_SECTIONS = {(ExperimentConfig, f.name): f.default_factory for f in dataclasses.fields(ExperimentConfig) if f.default_factory is not dataclasses.MISSING}


def to_dict(cfg) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v

    return conv(cfg)


def merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def from_dict(data: dict) -> ExperimentConfig:
    try:
        cfg = _build(ExperimentConfig, data, "")
        return cfg.check()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def default_config_path() -> Path:
    return Path(str(resources.files("svfi_nbv") / "data" / "default.yaml"))


def load_config(path=None) -> ExperimentConfig:
    """Read a YAML config; missing keys take the shipped defaults, unknown keys are errors."""
    if path is None:
        path = default_config_path()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if data is None:
        data = {}
    return from_dict(data)
