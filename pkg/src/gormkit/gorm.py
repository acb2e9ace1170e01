"""Inverse reachability: base-pose candidates for a grasp target.

The oriented reachability map (ORM) inverts every reachable (voxel, orientation)
pair into a body pose expressed in the TCP frame. Lifting it onto a world target
and filtering by locomotion range, collisions and reachability gives the
candidate distribution the planner pursues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .rmap import ReachabilityMap
from .transforms import (
    Pose,
    _geodesic,
    _rotate,
    compose_batch,
    geodesic_distance,
    inverse_batch,
    pose_distance,
    quat_from_axis_angle,
    quat_mul,
    quat_to_rpy,
)

__all__ = [
    "Box",
    "EmptyDistribution",
    "Environment",
    "GormDistribution",
    "LocomotionLimits",
    "OrmEntry",
    "OrmTable",
    "build_gorm",
    "candidate_masks",
    "collision_free_mask",
    "locomotion_mask",
    "geodesic_distance",
    "gorm_reward",
    "invert_rm",
    "min_distance",
    "pose_distance",
]


class EmptyDistribution(Exception):
    """No base-pose candidate survived; a planning signal rather than a fault."""


class OrmEntry(NamedTuple):
    base_in_tcp: Pose
    score: float


@dataclass
class OrmTable:
    """Structure-of-arrays ORM: row i is the body pose (t[i], q[i]) in the TCP frame."""

    t: np.ndarray
    q: np.ndarray
    score: np.ndarray
    voxel: np.ndarray
    orient: np.ndarray

    def __post_init__(self):
        n = len(self.score)
        if not (len(self.t) == len(self.q) == len(self.voxel) == len(self.orient) == n):
            raise ValueError("ORM columns have different lengths")
        if n and np.any(self.score <= 0):
            raise ValueError("ORM entries need a positive score")

    def __len__(self):
        return len(self.score)

    def __getitem__(self, i) -> OrmEntry:
        return OrmEntry(Pose(self.t[i], self.q[i]), float(self.score[i]))

    def __iter__(self) -> Iterator[OrmEntry]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, OrmTable):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("t", "q", "score", "voxel", "orient")
        )


def invert_rm(rm: ReachabilityMap, mount: Optional[Pose] = None,
              roll_subdivisions: int = 1) -> OrmTable:
    """One entry per set bit: ``base_in_tcp = (mount o P)^-1`` with P the TCP pose
    in the arm-base frame and ``mount`` the arm base in the body frame.

    ``roll_subdivisions > 1`` adds copies of every entry with the tool rolled
    about its approach axis by fractions of the roll bin width. Only valid
    for arms whose reachability ignores tool roll (``ArmModel.tool_roll_free``);
    copies keep the source voxel, orientation bin and score.
    """
    if int(roll_subdivisions) < 1:
        raise ValueError("roll_subdivisions must be >= 1")
    mount = mount or Pose()
    vox, ori = np.nonzero(rm.bins)
    centers = rm.grid.centers()[vox]
    t_body, q_body = compose_batch(mount.translation, mount.rotation, centers, rm.orient.quats[ori])
    t_inv, q_inv = inverse_batch(t_body, q_body)
    ts, qs = [t_inv], [q_inv]
    width = 2.0 * math.pi / rm.orient.n_rolls
    for j in range(1, int(roll_subdivisions)):
        # (P Rz(a))^-1 = Rz(-a) P^-1
        qa = quat_from_axis_angle([0.0, 0.0, 1.0], -width * j / roll_subdivisions)
        t, q = compose_batch(np.zeros(3), qa, t_inv, q_inv)
        ts.append(t)
        qs.append(q)
    n = int(roll_subdivisions)
    return OrmTable(
        np.ascontiguousarray(np.concatenate(ts)),
        np.ascontiguousarray(np.concatenate(qs)),
        np.tile(rm.index[vox].astype(np.float64), n),
        np.tile(vox.astype(np.int64), n),
        np.tile(ori.astype(np.int64), n),
    )


@dataclass(frozen=True)
class LocomotionLimits:
    """Admissible body poses.

    The pitch interval is full-width at mid height and shrinks linearly to
    ``+-pitch_at_extremes`` at either height limit, matching the planner's
    command bounds; ``pitch_at_extremes=None`` disables the coupling.
    """

    height: tuple = (0.30, 0.65)
    pitch: tuple = (-0.4, 0.4)
    roll_tolerance: float = 0.1
    planar_range: float = math.inf
    pitch_at_extremes: Optional[float] = 0.1

    def __post_init__(self):
        for name in ("height", "pitch"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} interval needs min <= max")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.roll_tolerance < 0:
            raise ValueError("roll_tolerance must be >= 0")
        if self.planar_range <= 0:
            raise ValueError("planar_range must be > 0")
        if self.pitch_at_extremes is not None and self.pitch_at_extremes < 0:
            raise ValueError("pitch_at_extremes must be >= 0")

    @classmethod
    def unbounded(cls):
        return cls((-math.inf, math.inf), (-math.inf, math.inf), math.inf, math.inf, None)

    def pitch_bounds(self, h):
        """Pitch interval admissible at body height ``h`` (array-friendly)."""
        lo, hi = self.pitch
        h = np.asarray(h, dtype=float)
        span = 0.5 * (self.height[1] - self.height[0])
        if self.pitch_at_extremes is None or not math.isfinite(span) or span <= 0:
            return np.full(h.shape, lo), np.full(h.shape, hi)
        dev = np.minimum(np.abs(h - 0.5 * (self.height[0] + self.height[1])) / span, 1.0)
        pe = self.pitch_at_extremes
        hi_e = np.where(hi > pe, hi - (hi - pe) * dev, hi)
        lo_e = np.where(lo < -pe, lo + (-pe - lo) * dev, lo)
        return lo_e, hi_e


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(a > b for a, b in zip(lo, hi)):
            raise ValueError("box needs three components with min <= max")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclass(frozen=True)
class Environment:
    ground_height: float = 0.0
    boxes: tuple = ()
    robot_body: Box = Box((-0.30, -0.15, -0.08), (0.30, 0.15, 0.08))

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))

    @classmethod
    def empty(cls, robot_body: Optional[Box] = None):
        """No ground, no obstacles."""
        return cls(-math.inf, (), robot_body or Box((-0.30, -0.15, -0.08), (0.30, 0.15, 0.08)))

    def with_boxes(self, *boxes: Box) -> "Environment":
        return Environment(self.ground_height, self.boxes + tuple(boxes), self.robot_body)


def _body_aabb(env: Environment, t, q):
    """World AABB of the body box at each pose (conservative for any rotation)."""
    lo = np.asarray(env.robot_body.lo)
    hi = np.asarray(env.robot_body.hi)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    world = _rotate(q[:, None, :], corners[None, :, :]) + t[:, None, :]
    return world.min(axis=1), world.max(axis=1)


def locomotion_mask(t, q, limits: LocomotionLimits, start_xy=None):
    roll, pitch, _ = quat_to_rpy(q)
    z = t[:, 2]
    p_lo, p_hi = limits.pitch_bounds(z)
    ok = (
        (np.abs(roll) <= limits.roll_tolerance)
        & (pitch >= p_lo) & (pitch <= p_hi)
        & (z >= limits.height[0]) & (z <= limits.height[1])
    )
    if math.isfinite(limits.planar_range):
        origin = np.zeros(2) if start_xy is None else np.asarray(start_xy, dtype=float)
        ok &= np.linalg.norm(t[:, :2] - origin, axis=1) <= limits.planar_range
    return ok


def collision_free_mask(t, q, env: Environment):
    free = np.ones(len(t), dtype=bool)
    if len(t) and (env.boxes or math.isfinite(env.ground_height)):
        amin, amax = _body_aabb(env, t, q)
        free &= amin[:, 2] >= env.ground_height
        for b in env.boxes:
            overlap = np.all((amin < np.asarray(b.hi)) & (amax > np.asarray(b.lo)), axis=1)
            free &= ~overlap
    return free


def candidate_masks(t, q, score, limits: LocomotionLimits, env: Environment,
                    reach_threshold: float, start_xy=None):
    """Per-candidate pass flags for the locomotion, collision and reachability filters."""
    return (
        locomotion_mask(t, q, limits, start_xy),
        collision_free_mask(t, q, env),
        score >= reach_threshold,
    )


@dataclass
class GormDistribution:
    """Filtered base candidates stored in the target frame; world poses derived lazily."""

    target_pose_world: Pose
    t: np.ndarray
    q: np.ndarray
    score: np.ndarray
    reach_threshold: float
    source: np.ndarray = field(default=None)
    _world: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.source is None:
            self.source = np.arange(len(self.score), dtype=np.int64)
        if len(self.score) and np.any(self.score < self.reach_threshold):
            raise ValueError("candidate below reach threshold")

    def __len__(self):
        return len(self.score)

    def world(self):
        """Candidate world poses as (t, q) arrays."""
        if self._world is None:
            tp = self.target_pose_world
            self._world = compose_batch(tp.translation, tp.rotation, self.t, self.q)
        return self._world

    def world_pose(self, i: int) -> Pose:
        t, q = self.world()
        return Pose(t[i], q[i])

    def candidates(self):
        return [
            {"base_in_target": Pose(self.t[i], self.q[i]), "score": float(self.score[i])}
            for i in range(len(self))
        ]

    def __eq__(self, other):
        if not isinstance(other, GormDistribution):
            return NotImplemented
        return (
            self.target_pose_world == other.target_pose_world
            and self.reach_threshold == other.reach_threshold
            and all(np.array_equal(getattr(self, k), getattr(other, k))
                    for k in ("t", "q", "score", "source"))
        )


def build_gorm(orm: OrmTable, target: Pose, limits: Optional[LocomotionLimits] = None,
               env: Optional[Environment] = None, reach_threshold: float = 0.3,
               start_xy=None) -> GormDistribution:
    """Lift the ORM onto ``target`` and drop candidates failing any filter.

    Raises :class:`EmptyDistribution` when nothing survives.
    """
    if not 0.0 <= reach_threshold <= 1.0:
        raise ValueError("reach_threshold must be in [0, 1]")
    limits = limits or LocomotionLimits()
    env = env if env is not None else Environment()
    # cheapest predicates first; rotation-only tests run before any translation work
    keep = np.flatnonzero(orm.score >= reach_threshold)
    n_reach = keep.size
    qw = quat_mul(target.rotation, orm.q[keep])
    roll, pitch, _ = quat_to_rpy(qw)
    ok = (np.abs(roll) <= limits.roll_tolerance) & (pitch >= limits.pitch[0]) & (pitch <= limits.pitch[1])
    keep, qw = keep[ok], qw[ok]
    tw = target.translation + _rotate(target.rotation, orm.t[keep])
    loco = locomotion_mask(tw, qw, limits, start_xy)
    keep, tw, qw = keep[loco], tw[loco], qw[loco]
    n_loco = keep.size
    keep = keep[collision_free_mask(tw, qw, env)]
    if keep.size == 0:
        raise EmptyDistribution(
            f"all {len(orm)} ORM entries filtered "
            f"(reach {n_reach}, then locomotion {n_loco}, then collision-free 0)"
        )
    return GormDistribution(
        target, orm.t[keep].copy(), orm.q[keep].copy(), orm.score[keep].copy(),
        float(reach_threshold), keep.astype(np.int64),
    )


def distances(gorm: GormDistribution, base_world: Pose, lam: float = 1.0) -> np.ndarray:
    """Euclidean + ``lam`` * geodesic distance to every candidate."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    t, q = gorm.world()
    return np.linalg.norm(t - base_world.translation, axis=1) + lam * _geodesic(
        q, base_world.rotation[None, :]
    )


def min_distance(gorm: GormDistribution, base_world: Pose, lam: float = 1.0):
    """``(d_min, index)`` of the nearest candidate; lowest index wins ties."""
    if gorm is None or len(gorm) == 0:
        raise EmptyDistribution("empty candidate distribution")
    d = distances(gorm, base_world, lam)
    k = int(np.argmin(d))
    return float(d[k]), k


def gorm_reward(d_min: float) -> float:
    """exp(-d_min^2)."""
    if not d_min >= 0:
        raise ValueError("d_min must be a non-negative number")
    return math.exp(-d_min * d_min)
