"""Orientation-resolved reachability map over a voxel grid in the arm-base frame."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .kinematics import ArmModel, ConfigurationError, IkParams, ik_seeds, sweep_reachability
from .transforms import Pose, _geodesic, matrix_to_quat, quat_to_matrix

log = logging.getLogger(__name__)

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` unit vectors on the Fibonacci lattice of the sphere."""
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * GOLDEN_ANGLE
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _frame_with_z(d):
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = helper - np.dot(helper, d) * d
    x /= np.linalg.norm(x)
    y = np.cross(d, x)
    return np.stack([x, y, d], axis=1)


@dataclass(frozen=True)
class OrientationSet:
    """Approach directions (tool z-axis) times rolls about that axis.

    Rotation index is ``dir_index * n_rolls + roll_index``.
    """

    n_dirs: int
    n_rolls: int
    quats: np.ndarray = field(init=False, repr=False, compare=False)
    matrices: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n_dirs) < 1 or int(self.n_rolls) < 1:
            raise ConfigurationError("n_dirs and n_rolls must be >= 1")
        mats = []
        for d in fibonacci_directions(self.n_dirs):
            base = _frame_with_z(d)
            for j in range(self.n_rolls):
                a = 2.0 * math.pi * j / self.n_rolls
                c, s = math.cos(a), math.sin(a)
                roll = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
                mats.append(base @ roll)
        mats = np.ascontiguousarray(np.array(mats))
        quats = matrix_to_quat(mats)
        # canonical matrices rebuilt from the stored quaternions
        object.__setattr__(self, "quats", quats)
        object.__setattr__(self, "matrices", np.ascontiguousarray(quat_to_matrix(quats)))

    def __len__(self):
        return self.n_dirs * self.n_rolls

    def nearest(self, q) -> int:
        """Index of the closest rotation by geodesic angle (lowest index on ties)."""
        return int(np.argmin(_geodesic(self.quats, np.asarray(q, dtype=float)[None, :])))


def sample_orientations(n_dirs: int, n_rolls: int) -> OrientationSet:
    return OrientationSet(int(n_dirs), int(n_rolls))


@dataclass(frozen=True)
class GridSpec:
    """Voxel centers at ``origin + index * spacing`` for index in ``[0, dims)``."""

    origin: tuple
    spacing: float
    dims: tuple

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        dims = tuple(int(v) for v in self.dims)
        if len(origin) != 3 or len(dims) != 3:
            raise ConfigurationError("grid origin and dims need three components")
        if not (self.spacing > 0):
            raise ConfigurationError("grid spacing must be > 0")
        if min(dims) < 1:
            raise ConfigurationError("grid dims must be >= 1")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def centered_cube(cls, half_extent: float = 1.0, spacing: float = 0.05, center=(0.0, 0.0, 0.0)):
        n = int(round(2.0 * half_extent / spacing)) + 1
        origin = tuple(c - 0.5 * (n - 1) * spacing for c in center)
        return cls(origin, spacing, (n, n, n))

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def centers(self) -> np.ndarray:
        """All voxel centers in C order, shape (n_voxels, 3)."""
        axes = [self.origin[a] + self.spacing * np.arange(self.dims[a]) for a in range(3)]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack([c.reshape(-1) for c in g], axis=1)

    def nearest_index(self, points):
        """Flat voxel index of the nearest center, -1 when outside the grid."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ijk = np.rint((pts - np.asarray(self.origin)) / self.spacing)
        dims = np.asarray(self.dims)
        inside = np.all((ijk >= 0) & (ijk < dims), axis=1) & np.all(np.isfinite(pts), axis=1)
        ijk = np.where(inside[:, None], ijk, 0).astype(np.int64)
        flat = np.ravel_multi_index(ijk.T, self.dims)
        return np.where(inside, flat, -1)


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float


@dataclass
class ReachabilityMap:
    """Per-voxel orientation bitmask plus the aggregate reachability index.

    ``bins`` is a bool array (n_voxels, n_orientations); ``index`` is float32
    ``popcount / n_orientations`` per voxel.
    """

    grid: GridSpec
    orient: OrientationSet
    bins: np.ndarray
    arm_hash: bytes = b"\x00" * 32
    index: np.ndarray = field(default=None)

    def __post_init__(self):
        self.bins = np.ascontiguousarray(self.bins, dtype=np.bool_)
        if self.bins.shape != (self.grid.n_voxels, len(self.orient)):
            raise ConfigurationError(
                f"bins shape {self.bins.shape} does not match grid/orientations "
                f"({self.grid.n_voxels}, {len(self.orient)})"
            )
        expected = compute_index(self.bins)
        if self.index is None:
            self.index = expected
        elif not np.array_equal(np.asarray(self.index, dtype=np.float32), expected):
            raise ConfigurationError("index inconsistent with bitmask popcount")
        else:
            self.index = expected
        if len(self.arm_hash) != 32:
            raise ConfigurationError("arm_hash must be 32 bytes")

    @property
    def n_set(self) -> int:
        return int(self.bins.sum())

    def __eq__(self, other):
        if not isinstance(other, ReachabilityMap):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.orient == other.orient
            and self.arm_hash == other.arm_hash
            and np.array_equal(self.bins, other.bins)
            and np.array_equal(self.index, other.index)
        )


def compute_index(bins) -> np.ndarray:
    bins = np.asarray(bins, dtype=np.bool_)
    return (bins.sum(axis=1) / bins.shape[1]).astype(np.float32)


def build_rm(
    arm: ArmModel,
    grid: GridSpec,
    orient: OrientationSet,
    ik: Optional[IkParams] = None,
    seeds_per_pose: int = 3,
    rng_seed: int = 0,
    chunk: int = 2048,
) -> ReachabilityMap:
    """Sweep every (voxel center, orientation) pair through the IK solver.

    A bit is set when :func:`~gormkit.kinematics.solve_ik` converges from any of
    the seeds (mid-limits, then ``seeds_per_pose - 1`` draws from
    ``default_rng(rng_seed)``). Voxels beyond the arm's reach bound are skipped.
    """
    ik = ik or IkParams()
    seeds = ik_seeds(arm, seeds_per_pose, rng_seed)
    centers = grid.centers()
    bins = np.zeros((grid.n_voxels, len(orient)), dtype=np.bool_)
    todo = np.flatnonzero(np.linalg.norm(centers, axis=1) <= arm.max_reach)
    if todo.size == 0:
        warnings.warn("grid lies entirely outside the arm's reach; map is all zero", RuntimeWarning)
        log.warning("grid entirely outside reach (max reach %.3f m)", arm.max_reach)
    t0 = time.perf_counter()
    for start in range(0, todo.size, chunk):
        sel = todo[start:start + chunk]
        bins[sel] = sweep_reachability(arm, centers[sel], orient.matrices, seeds, ik)
        done = min(start + chunk, todo.size)
        log.info("build_rm: %d/%d voxels in reach swept (%.1fs)", done, todo.size,
                 time.perf_counter() - t0)
    return ReachabilityMap(grid, orient, bins, arm.digest)


def query_index(rm: ReachabilityMap, position) -> float:
    """Aggregate index at the nearest voxel; 0 outside the grid."""
    v = int(rm.grid.nearest_index(position)[0])
    return 0.0 if v < 0 else float(rm.index[v])


def query_index_batch(rm: ReachabilityMap, positions) -> np.ndarray:
    v = rm.grid.nearest_index(positions)
    out = np.zeros(v.shape[0])
    ok = v >= 0
    out[ok] = rm.index[v[ok]]
    return out


def query_reachable(rm: ReachabilityMap, pose_in_base: Pose) -> bool:
    """Stored bit at (nearest voxel, nearest orientation bin); False outside the grid."""
    v = int(rm.grid.nearest_index(pose_in_base.translation)[0])
    if v < 0:
        return False
    return bool(rm.bins[v, rm.orient.nearest(pose_in_base.rotation)])


def tracking_sphere(rm: ReachabilityMap, dexterity_threshold: float,
                    mount: Optional[Pose] = None) -> Sphere:
    """Largest voxel-centered sphere whose interior voxels all meet the threshold.

    The radius is the distance to the closest failing voxel center (cells just
    outside the grid count as failing) minus half a spacing, so growing it by
    one spacing always swallows a failing voxel. The center is returned in the
    body frame when ``mount`` is given, otherwise in the arm-base frame.
    """
    if not 0.0 < dexterity_threshold <= 1.0:
        raise ValueError("dexterity_threshold must be in (0, 1]")
    mount = mount or Pose()
    good = (rm.index >= np.float32(dexterity_threshold)).reshape(rm.grid.dims)
    if not good.any():
        return Sphere(mount.translation.copy(), 0.0)
    padded = np.pad(good, 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded)[1:-1, 1:-1, 1:-1]
    dist = np.where(good, dist, 0.0)
    best = int(np.argmax(dist))
    radius = max(float(dist.reshape(-1)[best]) - 0.5, 0.0) * rm.grid.spacing
    center = rm.grid.centers()[best]
    return Sphere(mount.apply(center), radius)
