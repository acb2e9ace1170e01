"""Deterministic pursuit planner emitting 5D base commands.

Each step checks the target's reachability in the current body frame and
switches to grasping once it clears the threshold; otherwise it drives toward
the nearest base-pose candidate with a proportional law.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from .gorm import EmptyDistribution, GormDistribution, distances
from .rmap import ReachabilityMap, query_index
from .transforms import Pose


class Command5D(NamedTuple):
    vx: float
    vy: float
    omega: float
    h: float
    theta: float


class Bounds(NamedTuple):
    vx: tuple
    vy: tuple
    omega: tuple
    h: tuple
    theta: tuple

    def contains(self, cmd: Command5D, tol: float = 1e-12) -> bool:
        return all(lo - tol <= v <= hi + tol for v, (lo, hi) in zip(cmd, self))

    def clamp(self, cmd: Command5D) -> Command5D:
        return Command5D(*(min(max(v, lo), hi) for v, (lo, hi) in zip(cmd, self)))


@dataclass(frozen=True)
class CommandRanges:
    """Full command envelope at nominal height and zero pitch."""

    vx_max: float = 0.8
    vy_max: float = 0.5
    omega_max: float = 1.0
    height: tuple = (0.30, 0.65)
    pitch_max: float = 0.4
    pitch_at_extremes: float = 0.1

    def __post_init__(self):
        if min(self.vx_max, self.vy_max, self.omega_max, self.pitch_max) <= 0:
            raise ValueError("command ranges must be positive")
        if not self.height[0] <= self.height[1]:
            raise ValueError("height range needs min <= max")
        if not 0 < self.pitch_at_extremes <= self.pitch_max:
            raise ValueError("pitch_at_extremes must be in (0, pitch_max]")

    @property
    def h_nominal(self) -> float:
        return 0.5 * (self.height[0] + self.height[1])

    @property
    def h_span(self) -> float:
        return 0.5 * (self.height[1] - self.height[0])


def command_limits(h: float, theta: float, ranges: Optional[CommandRanges] = None) -> Bounds:
    """Bounds at body height ``h`` and pitch ``theta``.

    The pitch bound shrinks linearly from ``pitch_max`` at nominal height to
    ``pitch_at_extremes`` at either height extreme. Planar speeds and yaw rate
    scale by ``(1 - 0.5 |theta|/pitch_max) * (1 - 0.5 |h - h_nom|/h_span)``,
    both factors saturating at 0.5.
    """
    r = ranges or CommandRanges()
    if not (math.isfinite(h) and math.isfinite(theta)):
        raise ValueError("h and theta must be finite")
    hdev = min(abs(h - r.h_nominal) / r.h_span, 1.0) if r.h_span > 0 else 0.0
    tdev = min(abs(theta) / r.pitch_max, 1.0)
    pitch = r.pitch_max - (r.pitch_max - r.pitch_at_extremes) * hdev
    scale = (1.0 - 0.5 * tdev) * (1.0 - 0.5 * hdev)
    return Bounds(
        (-r.vx_max * scale, r.vx_max * scale),
        (-r.vy_max * scale, r.vy_max * scale),
        (-r.omega_max * scale, r.omega_max * scale),
        tuple(r.height),
        (-pitch, pitch),
    )


@dataclass(frozen=True)
class PlannerParams:
    kp_lin: float = 1.0
    kp_yaw: float = 1.5
    lam: float = 1.0
    switch_threshold: float = 0.5
    switch_hysteresis: float = 0.05
    candidate_stickiness: float = 0.1
    pursuit_score: Optional[float] = None

    def __post_init__(self):
        if self.kp_lin <= 0 or self.kp_yaw <= 0:
            raise ValueError("gains must be > 0")
        if not 0 < self.switch_threshold <= 1:
            raise ValueError("switch_threshold must be in (0, 1]")
        if self.switch_hysteresis < 0 or self.candidate_stickiness < 0 or self.lam < 0:
            raise ValueError("hysteresis, stickiness and lambda must be >= 0")
        if self.pursuit_score is not None and not 0 <= self.pursuit_score <= 1:
            raise ValueError("pursuit_score must be in [0, 1]")

    @property
    def min_pursuit_score(self) -> float:
        """Lowest candidate score worth driving to."""
        if self.pursuit_score is not None:
            return self.pursuit_score
        return min(self.switch_threshold + self.switch_hysteresis, 1.0)


class Phase(enum.Enum):
    TRACKING = "tracking"
    GRASPING = "grasping"


class _Switch:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "SwitchToGrasp"


SwitchToGrasp = _Switch()


@dataclass
class PlannerState:
    base_world: Pose
    current_h: float
    current_theta: float
    locked_candidate: Optional[int] = None
    phase: Phase = Phase.TRACKING
    last_reachability: float = 0.0


def target_reachability(rm: ReachabilityMap, base_world: Pose, target_world: Pose,
                        mount: Optional[Pose] = None) -> float:
    """Reachability index of the target position seen from the arm base."""
    mount = mount or Pose()
    in_arm = mount.inverse() @ (base_world.inverse() @ target_world)
    return query_index(rm, in_arm.translation)


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def pursue(state: PlannerState, goal: Pose, params: PlannerParams,
           ranges: Optional[CommandRanges] = None) -> Command5D:
    """Proportional command toward ``goal`` clamped to the current limits."""
    b = state.base_world
    _, _, yaw = b.rpy()
    _, g_pitch, g_yaw = goal.rpy()
    dx, dy = goal.translation[:2] - b.translation[:2]
    c, s = math.cos(yaw), math.sin(yaw)
    ex = c * dx + s * dy
    ey = -s * dx + c * dy
    raw = Command5D(
        params.kp_lin * ex,
        params.kp_lin * ey,
        params.kp_yaw * _wrap(g_yaw - yaw),
        float(goal.translation[2]),
        g_pitch,
    )
    return command_limits(state.current_h, state.current_theta, ranges).clamp(raw)


def plan_step(state: PlannerState, gorm: GormDistribution, rm: ReachabilityMap,
              params: PlannerParams, mount: Optional[Pose] = None,
              ranges: Optional[CommandRanges] = None) -> Union[Command5D, _Switch]:
    """One high-level step; mutates ``state`` and returns a command or ``SwitchToGrasp``.

    The pursued candidate is the nearest one whose score is at least
    ``switch_threshold + switch_hysteresis`` (all candidates when none is), kept
    locked unless another is closer by more than ``candidate_stickiness``.
    The switch fires once the target reachability clears the threshold by the
    hysteresis margin, so readings hovering at the threshold never trigger it.
    """
    if state.phase is not Phase.TRACKING:
        raise RuntimeError("plan_step called outside the tracking phase")
    if gorm is None or len(gorm) == 0:
        raise EmptyDistribution("empty candidate distribution")
    b = state.base_world
    if not (np.all(np.isfinite(b.translation)) and math.isfinite(state.current_h)
            and math.isfinite(state.current_theta)):
        raise ValueError("planner state contains NaN")

    r = target_reachability(rm, b, gorm.target_pose_world, mount)
    state.last_reachability = r
    if r >= params.switch_threshold + params.switch_hysteresis:
        state.phase = Phase.GRASPING
        return SwitchToGrasp

    d = distances(gorm, b, params.lam)
    # only candidates whose score would fire the switch on arrival are pursued
    capable = gorm.score >= params.min_pursuit_score
    if capable.any() and not capable.all():
        d = np.where(capable, d, np.inf)
    k = int(np.argmin(d))
    lock = state.locked_candidate
    if lock is None or lock >= len(d) or d[lock] > d[k] + params.candidate_stickiness:
        lock = k
    state.locked_candidate = lock
    return pursue(state, gorm.world_pose(lock), params, ranges)
