"""Rigid transforms with unit quaternions in (w, x, y, z) order.

Scalar helpers work on single quaternions/poses; the ``*_batch`` variants take
stacked arrays of shape (n, 4) / (n, 3) so that large candidate sets can be
processed without Python loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-6


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("zero-norm quaternion")
    return q / n


def quat_mul(a, b):
    """Hamilton product, broadcasting over leading dimensions."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q, v):
    """Rotate vector(s) ``v`` by quaternion(s) ``q``."""
    return _rotate(q, v)


def _rotate(q, v):
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., 0]
    x, y, z = q[..., 1], q[..., 2], q[..., 3]
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    # v + w t + u x t with t = 2 u x v
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return np.stack(
        [vx + w * tx + (y * tz - z * ty), vy + w * ty + (z * tx - x * tz), vz + w * tz + (x * ty - y * tx)],
        axis=-1,
    )


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m):
    """Rotation matrix (..., 3, 3) to unit quaternion with w >= 0."""
    m = np.asarray(m, dtype=float)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    tr = np.trace(flat, axis1=1, axis2=2)
    # Shepperd: pick the largest of (w, x, y, z) squared to divide by
    cand = np.stack(
        [tr, flat[:, 0, 0], flat[:, 1, 1], flat[:, 2, 2]], axis=1
    )
    k = np.argmax(cand, axis=1)
    for i in range(4):
        sel = k == i
        if not np.any(sel):
            continue
        r = flat[sel]
        if i == 0:
            s = np.sqrt(1.0 + tr[sel]) * 2.0
            q = np.stack(
                [0.25 * s, (r[:, 2, 1] - r[:, 1, 2]) / s, (r[:, 0, 2] - r[:, 2, 0]) / s,
                 (r[:, 1, 0] - r[:, 0, 1]) / s], axis=1)
        elif i == 1:
            s = np.sqrt(1.0 + r[:, 0, 0] - r[:, 1, 1] - r[:, 2, 2]) * 2.0
            q = np.stack(
                [(r[:, 2, 1] - r[:, 1, 2]) / s, 0.25 * s, (r[:, 0, 1] + r[:, 1, 0]) / s,
                 (r[:, 0, 2] + r[:, 2, 0]) / s], axis=1)
        elif i == 2:
            s = np.sqrt(1.0 + r[:, 1, 1] - r[:, 0, 0] - r[:, 2, 2]) * 2.0
            q = np.stack(
                [(r[:, 0, 2] - r[:, 2, 0]) / s, (r[:, 0, 1] + r[:, 1, 0]) / s, 0.25 * s,
                 (r[:, 1, 2] + r[:, 2, 1]) / s], axis=1)
        else:
            s = np.sqrt(1.0 + r[:, 2, 2] - r[:, 0, 0] - r[:, 1, 1]) * 2.0
            q = np.stack(
                [(r[:, 1, 0] - r[:, 0, 1]) / s, (r[:, 0, 2] + r[:, 2, 0]) / s,
                 (r[:, 1, 2] + r[:, 2, 1]) / s, 0.25 * s], axis=1)
        out[sel] = q
    out[out[:, 0] < 0] *= -1.0
    out = out / np.linalg.norm(out, axis=1, keepdims=True)
    return out.reshape(m.shape[:-2] + (4,))


def quat_from_rpy(roll, pitch, yaw):
    """Intrinsic Z-Y-X (yaw, then pitch, then roll) Euler angles."""
    qz = quat_from_axis_angle([0.0, 0.0, 1.0], yaw)
    qy = quat_from_axis_angle([0.0, 1.0, 0.0], pitch)
    qx = quat_from_axis_angle([1.0, 0.0, 0.0], roll)
    return quat_mul(quat_mul(qz, qy), qx)


def quat_to_rpy(q):
    """Inverse of :func:`quat_from_rpy`; returns (roll, pitch, yaw) arrays."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    roll = np.arctan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = np.arcsin(np.clip(2 * (w * y - z * x), -1.0, 1.0))
    yaw = np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return roll, pitch, yaw


def check_unit(q, tol=UNIT_TOL):
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("quaternion contains non-finite values")
    dev = np.abs(np.linalg.norm(q, axis=-1) - 1.0)
    if np.any(dev > tol):
        raise ValueError(f"quaternion is not unit-norm (deviation {float(np.max(dev)):.3g})")


def geodesic_distance(q1, q2):
    """Rotation angle between unit quaternions, in [0, pi].

    Equivalent to ``2 * acos(|<q1, q2>|)`` but evaluated as
    ``4 * atan2(|q1 - s q2|, |q1 + s q2|)`` with ``s = sign(<q1, q2>)``,
    which keeps full precision near 0 and makes ``q`` and ``-q`` identical.
    Broadcasts over leading dimensions.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    check_unit(q1)
    check_unit(q2)
    return _geodesic(q1, q2)


def _geodesic(q1, q2):
    dot = np.sum(q1 * q2, axis=-1)
    s = np.where(dot < 0.0, -1.0, 1.0)[..., None]
    u = s * q2
    return 4.0 * np.arctan2(np.linalg.norm(q1 - u, axis=-1), np.linalg.norm(q1 + u, axis=-1))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``x_parent = R x_child + t``."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        q = np.array(self.rotation, dtype=float).reshape(4)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(q))):
            raise ValueError("pose contains non-finite values")
        q = quat_normalize(q)
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3], matrix_to_quat(T[:3, :3]))

    @classmethod
    def from_xyz_rpy(cls, xyz, rpy=(0.0, 0.0, 0.0)):
        return cls(xyz, quat_from_rpy(*rpy))

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float).reshape(7)
        return cls(a[:3], a[3:])

    def as_array(self):
        """``[x, y, z, qw, qx, qy, qz]``."""
        return np.concatenate([self.translation, self.rotation])

    def as_matrix(self):
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.rotation)
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.translation + _rotate(self.rotation, other.translation),
            quat_mul(self.rotation, other.rotation),
        )

    __matmul__ = compose

    def inverse(self) -> "Pose":
        qi = quat_conj(self.rotation)
        return Pose(-_rotate(qi, self.translation), qi)

    def apply(self, points):
        return _rotate(self.rotation, np.asarray(points, dtype=float)) + self.translation

    def rpy(self):
        r, p, y = quat_to_rpy(self.rotation)
        return float(r), float(p), float(y)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.translation, other.translation)
            and np.array_equal(self.rotation, other.rotation)
        )

    def __hash__(self):
        return hash((self.translation.tobytes(), self.rotation.tobytes()))

    def __repr__(self):
        t = np.array2string(self.translation, precision=4)
        q = np.array2string(self.rotation, precision=4)
        return f"Pose(t={t}, q={q})"


def compose_batch(t1, q1, t2, q2):
    """Compose stacked poses ``(t1, q1) o (t2, q2)``; any side may be a single pose."""
    return np.asarray(t1) + _rotate(q1, t2), quat_mul(q1, q2)


def inverse_batch(t, q):
    qi = quat_conj(q)
    return -_rotate(qi, t), qi


def pose_distance(a: Pose, b: Pose, lam: float = 1.0) -> float:
    """Euclidean translation distance plus ``lam`` times the rotation angle."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return float(
        np.linalg.norm(a.translation - b.translation)
        + lam * _geodesic(a.rotation, b.rotation)
    )
