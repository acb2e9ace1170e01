"""YAML run configuration validated with pydantic.

Unknown keys are rejected so that a typo in a physical parameter fails loudly
instead of silently falling back to a default.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import gorm as _gorm
from . import kinematics as _kin
from . import planner as _planner
from . import rmap as _rmap
from . import sim as _sim
from .transforms import Pose


class ConfigError(Exception):
    """Config file could not be read or failed validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Vec3 = Tuple[float, float, float]
Interval = Tuple[float, float]


class PoseSpec(_Strict):
    xyz: Vec3 = (0.0, 0.0, 0.0)
    rpy: Vec3 = (0.0, 0.0, 0.0)

    def build(self) -> Pose:
        return Pose.from_xyz_rpy(self.xyz, self.rpy)


class JointSpec(_Strict):
    axis: Vec3
    origin: PoseSpec = PoseSpec()
    limits: Interval


class ArmSpec(_Strict):
    preset: Optional[Literal["z1-like-6dof", "planar-2r"]] = "z1-like-6dof"
    joints: Optional[List[JointSpec]] = None
    tcp_offset: Optional[PoseSpec] = None
    mount: Optional[PoseSpec] = None
    name: Optional[str] = None

    def build(self) -> _kin.ArmModel:
        if self.joints is None:
            if self.preset is None:
                raise ConfigError("arm: give either a preset or a joint list")
            base = _kin.default_arm() if self.preset == "z1-like-6dof" else _kin.planar_2r_arm()
            joints, tcp, mount, name = base.joints, base.tcp_offset, base.mount, base.name
        else:
            joints = tuple(_kin.Joint(j.axis, j.origin.build(), j.limits) for j in self.joints)
            tcp, mount, name = Pose(), Pose(), "arm"
        if self.tcp_offset is not None:
            tcp = self.tcp_offset.build()
        if self.mount is not None:
            mount = self.mount.build()
        return _kin.ArmModel(joints, tcp, mount, self.name or name)


class GridConfig(_Strict):
    half_extent: float = Field(1.0, gt=0)
    spacing: float = Field(0.05, gt=0)
    center: Vec3 = (0.0, 0.0, 0.0)

    def build(self) -> _rmap.GridSpec:
        return _rmap.GridSpec.centered_cube(self.half_extent, self.spacing, self.center)


class OrientationConfig(_Strict):
    n_dirs: int = Field(32, ge=1)
    n_rolls: int = Field(8, ge=1)


class IkConfig(_Strict):
    damping: float = Field(1e-2, ge=0)
    max_iters: int = Field(150, ge=1)
    pos_tol: float = Field(1e-4, gt=0)
    rot_tol: float = Field(1e-3, gt=0)
    step_clamp: float = Field(0.2, gt=0)
    stall_iters: int = Field(20, ge=1)
    seeds_per_pose: int = Field(3, ge=1)


class LimitsConfig(_Strict):
    height: Interval = (0.30, 0.65)
    pitch: Interval = (-0.4, 0.4)
    roll_tolerance: float = Field(0.1, ge=0)
    planar_range: float = Field(math.inf, gt=0)
    pitch_at_extremes: Optional[float] = Field(0.1, ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        for name in ("height", "pitch"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min must be <= max")
        return self


class BoxConfig(_Strict):
    lo: Vec3
    hi: Vec3


class EnvironmentConfig(_Strict):
    ground_height: float = 0.0
    boxes: List[BoxConfig] = []
    robot_body: BoxConfig = BoxConfig(lo=(-0.30, -0.15, -0.08), hi=(0.30, 0.15, 0.08))


class GormConfig(_Strict):
    reach_threshold: float = Field(0.3, ge=0, le=1)
    roll_subdivisions: int = Field(2, ge=1)


class PlannerConfig(_Strict):
    kp_lin: float = Field(1.0, gt=0)
    kp_yaw: float = Field(1.5, gt=0)
    lam: float = Field(1.0, ge=0)
    switch_threshold: float = Field(0.5, gt=0, le=1)
    switch_hysteresis: float = Field(0.05, ge=0)
    candidate_stickiness: float = Field(0.1, ge=0)
    pursuit_score: Optional[float] = Field(0.8, ge=0, le=1)
    vx_max: float = Field(0.8, gt=0)
    vy_max: float = Field(0.5, gt=0)
    omega_max: float = Field(1.0, gt=0)


class ScenarioConfig(_Strict):
    target_height: float = 0.75
    target_xy_range: float = Field(1.0, ge=0)
    target_yaw_range: float = Field(math.pi, ge=0)
    spawn_radius: Interval = (1.0, 2.0)
    max_steps: int = Field(150, ge=1)
    dt: float = Field(0.1, gt=0)
    tilt_max: float = Field(math.radians(30.0), ge=0, le=math.pi)
    grasp_z_offset: float = 0.05
    support_half_extent: float = Field(0.2, ge=0)
    h_rate: float = Field(0.2, gt=0)
    theta_rate: float = Field(0.5, gt=0)

    @model_validator(mode="after")
    def _ordered(self):
        lo, hi = self.spawn_radius
        if not 0 <= lo <= hi:
            raise ValueError("spawn_radius: need 0 <= min <= max")
        return self


class BenchConfig(_Strict):
    heights: List[float] = list(_sim.DEFAULT_HEIGHTS)
    trials: int = Field(100, ge=1)


class WorkspaceConfig(_Strict):
    index_threshold: float = Field(0.2, gt=0, le=1)


class RunConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    arm: ArmSpec = ArmSpec()
    grid: GridConfig = GridConfig()
    orientations: OrientationConfig = OrientationConfig()
    ik: IkConfig = IkConfig()
    limits: LimitsConfig = LimitsConfig()
    environment: EnvironmentConfig = EnvironmentConfig()
    gorm: GormConfig = GormConfig()
    planner: PlannerConfig = PlannerConfig()
    scenario: ScenarioConfig = ScenarioConfig()
    bench: BenchConfig = BenchConfig()
    workspace: WorkspaceConfig = WorkspaceConfig()

    # builders

    def build_arm(self) -> _kin.ArmModel:
        try:
            return self.arm.build()
        except ValueError as exc:
            raise ConfigError(f"arm: {exc}") from None

    def grid_spec(self) -> _rmap.GridSpec:
        return self.grid.build()

    def orientation_set(self) -> _rmap.OrientationSet:
        return _rmap.sample_orientations(self.orientations.n_dirs, self.orientations.n_rolls)

    def ik_params(self) -> _kin.IkParams:
        d = self.ik.model_dump()
        d.pop("seeds_per_pose")
        return _kin.IkParams(**d)

    def locomotion_limits(self) -> _gorm.LocomotionLimits:
        return _gorm.LocomotionLimits(**self.limits.model_dump())

    def environment_model(self) -> _gorm.Environment:
        e = self.environment
        return _gorm.Environment(
            e.ground_height,
            tuple(_gorm.Box(b.lo, b.hi) for b in e.boxes),
            _gorm.Box(e.robot_body.lo, e.robot_body.hi),
        )

    def planner_params(self) -> _planner.PlannerParams:
        p = self.planner
        return _planner.PlannerParams(p.kp_lin, p.kp_yaw, p.lam, p.switch_threshold,
                                      p.switch_hysteresis, p.candidate_stickiness, p.pursuit_score)

    def command_ranges(self) -> _planner.CommandRanges:
        base = _sim.ranges_for(self.locomotion_limits())
        p = self.planner
        return _planner.CommandRanges(p.vx_max, p.vy_max, p.omega_max, base.height,
                                      base.pitch_max, base.pitch_at_extremes)

    def scenario_model(self, seed: Optional[int] = None, **overrides) -> _sim.Scenario:
        d = self.scenario.model_dump()
        d.update(overrides)
        return _sim.Scenario(seed=self.seed if seed is None else seed,
                             environment=self.environment_model(), **d)

    def orm_for(self, rm: _rmap.ReachabilityMap, arm: _kin.ArmModel) -> _gorm.OrmTable:
        """Inverted map; roll densification only where the arm ignores tool roll."""
        sub = self.gorm.roll_subdivisions if arm.tool_roll_free else 1
        return _gorm.invert_rm(rm, arm.mount, sub)

    def digest(self) -> str:
        """Stable hash of the fully defaulted config."""
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def _describe(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{where}: {e['msg']}")
    return "; ".join(lines)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{source}:{where} invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_describe(exc)}") from None


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
