"""Kinematic episode simulator, height benchmark and workspace hull comparison."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .gorm import (
    Box,
    EmptyDistribution,
    Environment,
    GormDistribution,
    LocomotionLimits,
    OrmTable,
    build_gorm,
    gorm_reward,
    min_distance,
)
from .kinematics import ArmModel
from .planner import (
    Command5D,
    CommandRanges,
    PlannerParams,
    PlannerState,
    SwitchToGrasp,
    plan_step,
    target_reachability,
)
from .rmap import ReachabilityMap, _frame_with_z
from .transforms import Pose, matrix_to_quat, quat_from_rpy

log = logging.getLogger(__name__)

DEFAULT_HEIGHTS = (0.0, 0.3, 0.75, 1.0)


@dataclass(frozen=True)
class Scenario:
    target_height: float = 0.75
    target_xy_range: float = 1.0
    target_yaw_range: float = math.pi
    spawn_radius: tuple = (1.0, 2.0)
    max_steps: int = 150
    dt: float = 0.1
    seed: int = 0
    environment: Environment = field(default_factory=Environment)
    tilt_max: float = math.radians(30.0)
    grasp_z_offset: float = 0.05
    support_half_extent: float = 0.2
    h_rate: float = 0.2
    theta_rate: float = 0.5

    def __post_init__(self):
        if int(self.max_steps) < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        lo, hi = self.spawn_radius
        if not 0 <= lo <= hi:
            raise ValueError("spawn_radius needs 0 <= min <= max")
        if self.target_xy_range < 0 or self.target_yaw_range < 0:
            raise ValueError("target ranges must be >= 0")
        if not 0 <= self.tilt_max <= math.pi:
            raise ValueError("tilt_max must be in [0, pi]")
        if self.h_rate <= 0 or self.theta_rate <= 0:
            raise ValueError("rate limits must be > 0")
        object.__setattr__(self, "spawn_radius", (float(lo), float(hi)))
        object.__setattr__(self, "max_steps", int(self.max_steps))


class Outcome(enum.Enum):
    SWITCHED = "switched"
    TIMED_OUT = "timed_out"
    EMPTY = "empty"


class TrajectoryEntry(tuple):
    """(step, base_world, command, d_min, reward, reachability)."""

    __slots__ = ()

    def __new__(cls, step, base_world, command, d_min, reward, reachability):
        return super().__new__(cls, (step, base_world, command, d_min, reward, reachability))

    step = property(lambda s: s[0])
    base_world = property(lambda s: s[1])
    command = property(lambda s: s[2])
    d_min = property(lambda s: s[3])
    reward = property(lambda s: s[4])
    reachability = property(lambda s: s[5])


@dataclass
class EpisodeResult:
    target: Pose
    start: Pose
    trajectory: List[TrajectoryEntry]
    switch_step: Optional[int]
    switch_reachability: Optional[float]
    final_reachability: float
    outcome: Outcome
    n_candidates: int = 0

    @property
    def steps(self) -> int:
        return len(self.trajectory)

    def to_dict(self) -> dict:
        return {
            "target": self.target.as_array().tolist(),
            "start": self.start.as_array().tolist(),
            "outcome": self.outcome.value,
            "switch_step": self.switch_step,
            "switch_reachability": self.switch_reachability,
            "final_reachability": self.final_reachability,
            "n_candidates": self.n_candidates,
            "trajectory": [
                {
                    "step": e.step,
                    "base": e.base_world.as_array().tolist(),
                    "command": list(e.command),
                    "d_min": e.d_min,
                    "reward": e.reward,
                    "reachability": e.reachability,
                }
                for e in self.trajectory
            ],
        }


def base_pose(x: float, y: float, yaw: float, h: float, theta: float) -> Pose:
    return Pose([x, y, h], quat_from_rpy(0.0, theta, yaw))


def step_base(base: Pose, h: float, theta: float, cmd: Command5D, dt: float,
              h_rate: float = 0.2, theta_rate: float = 0.5):
    """Integrate one command; returns ``(pose, h, theta)``.

    Body-frame planar velocity is rotated by the current yaw; height and pitch
    move toward their setpoints by at most ``rate * dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    _, _, yaw = base.rpy()
    c, s = math.cos(yaw), math.sin(yaw)
    x = base.translation[0] + dt * (c * cmd.vx - s * cmd.vy)
    y = base.translation[1] + dt * (s * cmd.vx + c * cmd.vy)
    yaw = yaw + dt * cmd.omega
    dh = h_rate * dt
    dth = theta_rate * dt
    h2 = h + min(max(cmd.h - h, -dh), dh)
    th2 = theta + min(max(cmd.theta - theta, -dth), dth)
    return base_pose(x, y, yaw, h2, th2), h2, th2


def sample_target(scenario: Scenario, rng: np.random.Generator) -> Pose:
    """Grasp pose with the tool axis inside a downward cone and uniform roll."""
    r = scenario.target_xy_range
    x, y = rng.uniform(-r, r, size=2) if r > 0 else (0.0, 0.0)
    cos_t = rng.uniform(math.cos(scenario.tilt_max), 1.0)
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    az = rng.uniform(-math.pi, math.pi)
    d = np.array([sin_t * math.cos(az), sin_t * math.sin(az), -cos_t])
    roll = rng.uniform(-scenario.target_yaw_range, scenario.target_yaw_range)
    c, s = math.cos(roll), math.sin(roll)
    R = _frame_with_z(d) @ np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    z = scenario.target_height + scenario.grasp_z_offset
    return Pose([x, y, z], matrix_to_quat(R))


def sample_spawn(scenario: Scenario, target: Pose, rng: np.random.Generator, h0: float) -> Pose:
    lo, hi = scenario.spawn_radius
    rad = rng.uniform(lo, hi)
    bearing = rng.uniform(-math.pi, math.pi)
    yaw = rng.uniform(-math.pi, math.pi)
    x = target.translation[0] + rad * math.cos(bearing)
    y = target.translation[1] + rad * math.sin(bearing)
    return base_pose(x, y, yaw, h0, 0.0)


def scenario_environment(scenario: Scenario, target: Pose) -> Environment:
    """Scenario environment plus a support box under targets above the ground."""
    env = scenario.environment
    if scenario.target_height > 0 and scenario.support_half_extent > 0:
        e = scenario.support_half_extent
        tx, ty = target.translation[:2]
        support = Box((tx - e, ty - e, env.ground_height if math.isfinite(env.ground_height) else 0.0),
                      (tx + e, ty + e, scenario.target_height))
        env = env.with_boxes(support)
    return env


def standoff_distribution(target: Pose, start: Pose, h: float, rm: ReachabilityMap,
                          mount: Pose, standoff: float = 0.5) -> GormDistribution:
    """Single fixed candidate ``standoff`` m short of the target, facing it."""
    u = target.translation[:2] - start.translation[:2]
    n = np.linalg.norm(u)
    u = u / n if n > 1e-9 else np.array([1.0, 0.0])
    xy = target.translation[:2] - standoff * u
    goal = base_pose(xy[0], xy[1], math.atan2(u[1], u[0]), h, 0.0)
    rel = target.inverse() @ goal
    score = target_reachability(rm, goal, target, mount)
    return GormDistribution(target, rel.translation[None, :].copy(), rel.rotation[None, :].copy(),
                            np.array([score]), 0.0)


def ranges_for(limits: LocomotionLimits) -> CommandRanges:
    """Command envelope matching the locomotion limits used to filter candidates."""
    pe = limits.pitch_at_extremes
    pmax = max(abs(limits.pitch[0]), abs(limits.pitch[1]))
    return CommandRanges(height=limits.height, pitch_max=pmax,
                         pitch_at_extremes=pmax if pe is None else min(pe, pmax))


def run_episode(scenario: Scenario, arm: ArmModel, rm: ReachabilityMap, orm: OrmTable,
                params: Optional[PlannerParams] = None, limits: Optional[LocomotionLimits] = None,
                reach_threshold: float = 0.3, ranges: Optional[CommandRanges] = None,
                naive: bool = False, target: Optional[Pose] = None,
                start: Optional[Pose] = None) -> EpisodeResult:
    """Sample a target and spawn from ``scenario.seed`` and track until switch or timeout.

    A given ``target`` or ``start`` replaces the sampled one; both are still
    drawn so the scenario stream stays aligned. A given start sets the initial
    height and pitch from its pose.
    """
    params = params or PlannerParams()
    limits = limits or LocomotionLimits()
    ranges = ranges or ranges_for(limits)
    mount = arm.mount
    rng = np.random.default_rng(scenario.seed)
    sampled = sample_target(scenario, rng)
    target = sampled if target is None else target
    h0, th0 = ranges.h_nominal, 0.0
    spawn = sample_spawn(scenario, target, rng, h0)
    if start is None:
        start = spawn
    else:
        h0, th0 = float(start.translation[2]), float(start.rpy()[1])

    if naive:
        gorm = standoff_distribution(target, start, h0, rm, mount)
    else:
        try:
            gorm = build_gorm(orm, target, limits, scenario_environment(scenario, target),
                              reach_threshold, start.translation[:2])
        except EmptyDistribution:
            r = target_reachability(rm, start, target, mount)
            return EpisodeResult(target, start, [], None, None, r, Outcome.EMPTY, 0)

    state = PlannerState(start, h0, th0)
    traj: List[TrajectoryEntry] = []
    switch_step = None
    switch_r = None
    for step in range(scenario.max_steps):
        out = plan_step(state, gorm, rm, params, mount, ranges)
        if out is SwitchToGrasp:
            switch_step, switch_r = step, state.last_reachability
            break
        d, _ = min_distance(gorm, state.base_world, params.lam)
        traj.append(TrajectoryEntry(step, state.base_world, out, d, gorm_reward(d),
                                    state.last_reachability))
        base, h, th = step_base(state.base_world, state.current_h, state.current_theta, out,
                                scenario.dt, scenario.h_rate, scenario.theta_rate)
        state.base_world, state.current_h, state.current_theta = base, h, th

    final = target_reachability(rm, state.base_world, target, mount)
    outcome = Outcome.SWITCHED if switch_step is not None else Outcome.TIMED_OUT
    return EpisodeResult(target, start, traj, switch_step, switch_r, final, outcome,
                         0 if naive else len(gorm))


@dataclass(frozen=True)
class BenchRow:
    height_m: float
    mode: str
    trials: int
    mean_reachability: float
    switch_rate: float
    mean_steps: float


def run_benchmark(heights: Sequence[float], trials: int, scenario: Scenario, arm: ArmModel,
                  rm: ReachabilityMap, orm: OrmTable, params: Optional[PlannerParams] = None,
                  limits: Optional[LocomotionLimits] = None, reach_threshold: float = 0.3,
                  naive: bool = False, ranges: Optional[CommandRanges] = None):
    """Per-height aggregates over ``trials`` episodes seeded ``scenario.seed ^ trial``.

    Returns ``(rows, episodes)`` where ``episodes[i]`` holds the results behind ``rows[i]``.
    """
    if int(trials) < 1:
        raise ValueError("trials must be >= 1")
    mode = "naive" if naive else "gorm"
    rows, episodes = [], []
    for h in heights:
        eps = []
        for k in range(int(trials)):
            sc = replace(scenario, target_height=float(h), seed=int(scenario.seed) ^ k)
            eps.append(run_episode(sc, arm, rm, orm, params, limits, reach_threshold, ranges, naive))
        reach = float(np.mean([e.final_reachability for e in eps]))
        switched = float(np.mean([e.outcome is Outcome.SWITCHED for e in eps]))
        steps = float(np.mean([e.steps for e in eps]))
        log.info("height %.2f m %s: reachability %.3f, switched %.2f", h, mode, reach, switched)
        rows.append(BenchRow(float(h), mode, int(trials), reach, switched, steps))
        episodes.append(eps)
    return rows, episodes


# workspace comparison

PITCH_STEP = 0.05


def _hull_measures(points: np.ndarray):
    if len(points) < 4:
        return 0.0, 0.0
    try:
        hull = ConvexHull(points)
    except QhullError:
        return 0.0, 0.0
    return float(hull.volume), float(hull.area)


def _pitch_samples(lo: float, hi: float, step: float = PITCH_STEP):
    """Pitch angles whose hull encloses every continuous pitch in [lo, hi].

    Returns ``(angles, scale)``: the endpoints and interior lattice multiples of
    ``step`` at scale 1, plus the mid-angle of each gap at scale ``1/cos(gap/2)``
    so the sampled polygon circumscribes each swept arc.
    """
    if lo == hi:
        return np.array([lo]), np.array([1.0])
    k0, k1 = math.floor(lo / step) + 1, math.ceil(hi / step) - 1
    lattice = [k * step for k in range(k0, k1 + 1) if lo < k * step < hi]
    knots = np.array([lo] + lattice + [hi])
    gaps = np.diff(knots)
    mids = 0.5 * (knots[:-1] + knots[1:])
    angles = np.concatenate([knots, mids])
    scale = np.concatenate([np.ones(len(knots)), 1.0 / np.cos(0.5 * gaps)])
    return angles, scale


def _pitched(points: np.ndarray, theta: float, scale: float, h: float) -> np.ndarray:
    """Rotate body-frame points about y by ``theta`` with the xz plane scaled, then lift by h."""
    c, s = math.cos(theta), math.sin(theta)
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    return np.stack([scale * (c * x + s * z), y, scale * (-s * x + c * z) + h], axis=1)


def workspace_hull(arm: ArmModel, rm: ReachabilityMap, limits: Optional[LocomotionLimits] = None,
                   index_threshold: float = 0.2) -> dict:
    """Convex-hull volume and area of the arm-only and whole-body workspaces.

    The arm-only set holds voxel centers with index >= ``index_threshold`` at
    the nominal body pose (mid height, mid pitch). The whole-body set sweeps it
    over the admissible height and pitch ranges; height enters only through the
    interval endpoints since hulls of translated copies are spanned by the
    extremes.
    """
    if not 0.0 < index_threshold <= 1.0:
        raise ValueError("index_threshold must be in (0, 1]")
    limits = limits or LocomotionLimits()
    pts = rm.grid.centers()[rm.index >= np.float32(index_threshold)]
    out = {"volume_arm": 0.0, "area_arm": 0.0, "volume_wb": 0.0, "area_wb": 0.0,
           "n_points": int(len(pts))}
    if len(pts) == 0:
        log.warning("no voxel reaches index %.3f; workspace is empty", index_threshold)
        out["volume_ratio"] = out["area_ratio"] = float("nan")
        return out
    body = arm.mount.apply(pts)
    if len(body) >= 4:
        try:
            body = body[ConvexHull(body).vertices]
        except QhullError:
            pass
    body = np.ascontiguousarray(body)
    h_lo, h_hi = limits.height
    p_lo, p_hi = limits.pitch
    h_nom, p_nom = 0.5 * (h_lo + h_hi), 0.5 * (p_lo + p_hi)
    va, aa = _hull_measures(_pitched(body, p_nom, 1.0, h_nom))
    if h_lo == h_hi and p_lo == p_hi:
        vw, aw = va, aa
    else:
        angles, scale = _pitch_samples(p_lo, p_hi)
        heights = (h_lo,) if h_lo == h_hi else (h_lo, h_hi)
        cloud = np.concatenate([_pitched(body, a, s, h) for h in heights for a, s in zip(angles, scale)])
        vw, aw = _hull_measures(cloud)
    out.update(volume_arm=va, area_arm=aa, volume_wb=vw, area_wb=aw,
               volume_ratio=vw / va if va > 0 else float("nan"),
               area_ratio=aw / aa if aa > 0 else float("nan"))
    return out
