"""Serial-chain arm model, forward kinematics, geometric Jacobian and
damped-least-squares differential IK.

The numeric core lives in numba kernels operating on packed arrays so that the
reachability sweep can call the exact same solver millions of times.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numba as nb
import numpy as np

# the bundled TBB is too old for numba; prefer the layers that work everywhere
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .transforms import Pose, matrix_to_quat, quat_to_matrix


class ConfigurationError(ValueError):
    """Invalid model or parameter configuration (dimension mismatch, bad limits, ...)."""


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray
    origin: Pose
    limits: tuple

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if not np.isfinite(n) or abs(n - 1.0) > 1e-9:
            raise ConfigurationError(f"joint axis must be unit-norm, got {axis}")
        lo, hi = (float(v) for v in self.limits)
        if not lo < hi:
            raise ConfigurationError(f"joint limits need min < max, got [{lo}, {hi}]")
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "limits", (lo, hi))


@dataclass(frozen=True)
class ArmModel:
    """Revolute serial chain.

    ``mount`` is the arm base expressed in the body frame and ``tcp_offset`` the
    tool center point expressed in the last joint frame.
    """

    joints: tuple
    tcp_offset: Pose = field(default_factory=Pose)
    mount: Pose = field(default_factory=Pose)
    name: str = "arm"

    def __post_init__(self):
        joints = tuple(self.joints)
        if len(joints) < 1:
            raise ConfigurationError("arm needs at least one joint")
        object.__setattr__(self, "joints", joints)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @cached_property
    def lower(self):
        return np.array([j.limits[0] for j in self.joints])

    @cached_property
    def upper(self):
        return np.array([j.limits[1] for j in self.joints])

    @cached_property
    def mid_limits(self):
        return 0.5 * (self.lower + self.upper)

    @cached_property
    def max_reach(self) -> float:
        """Upper bound on the TCP distance from the arm base."""
        return float(
            sum(np.linalg.norm(j.origin.translation) for j in self.joints)
            + np.linalg.norm(self.tcp_offset.translation)
        )

    @cached_property
    def tool_roll_free(self) -> bool:
        """True when the last joint spins the tool about its own approach axis
        over a full turn, so reachability is invariant to tool roll."""
        last = self.joints[-1]
        if last.limits[1] - last.limits[0] < 2.0 * math.pi:
            return False
        t = self.tcp_offset.translation
        if np.linalg.norm(np.cross(t, last.axis)) > 1e-9:
            return False
        z_tool = quat_to_matrix(self.tcp_offset.rotation)[:, 2]
        return bool(abs(abs(float(np.dot(z_tool, last.axis))) - 1.0) < 1e-9)

    @cached_property
    def packed(self):
        axes = np.ascontiguousarray(np.stack([j.axis for j in self.joints]))
        origins = np.ascontiguousarray(np.stack([j.origin.as_matrix() for j in self.joints]))
        return axes, origins, np.ascontiguousarray(self.tcp_offset.as_matrix())

    def to_dict(self) -> dict:
        def pose_d(p: Pose):
            return {"xyz": [float(v) for v in p.translation], "quat": [float(v) for v in p.rotation]}

        return {
            "name": self.name,
            "joints": [
                {"axis": [float(v) for v in j.axis], "origin": pose_d(j.origin), "limits": list(j.limits)}
                for j in self.joints
            ],
            "tcp_offset": pose_d(self.tcp_offset),
            "mount": pose_d(self.mount),
        }

    @cached_property
    def digest(self) -> bytes:
        """SHA-256 over a canonical JSON rendering of the model (32 bytes)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).digest()


@dataclass(frozen=True)
class IkParams:
    damping: float = 1e-2
    max_iters: int = 150
    pos_tol: float = 1e-4
    rot_tol: float = 1e-3
    step_clamp: float = 0.2
    # abort once the error has not dropped by 0.1% for this many iterations
    stall_iters: int = 20

    def __post_init__(self):
        if self.damping < 0:
            raise ConfigurationError("damping must be >= 0")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be positive")
        if self.pos_tol <= 0 or self.rot_tol <= 0 or self.step_clamp <= 0:
            raise ConfigurationError("tolerances and step_clamp must be > 0")
        if self.stall_iters < 1:
            raise ConfigurationError("stall_iters must be positive")


def default_arm() -> ArmModel:
    """6-DoF arm with Z1-like proportions (reach 0.74 m) and a spherical wrist.

    Wrist roll joints are continuous-style (+-4 pi). The tool z-axis is the
    approach direction.
    """
    x, y, z = np.eye(3)
    roll = 4.0 * math.pi
    joints = (
        Joint(z, Pose([0.0, 0.0, 0.0]), (-2.6, 2.6)),
        Joint(y, Pose([0.0, 0.0, 0.10]), (-1.2, 2.2)),
        Joint(y, Pose([0.30, 0.0, 0.0]), (-2.2, 0.0)),
        Joint(y, Pose([0.28, 0.0, 0.0]), (-roll, roll)),
        Joint(z, Pose([0.0, 0.0, 0.0]), (-1.5, 1.5)),
        Joint(x, Pose([0.0, 0.0, 0.0]), (-roll, roll)),
    )
    # +90 deg about y: tool z-axis along the last link
    s = math.sqrt(0.5)
    tcp = Pose([0.06, 0.0, 0.0], [s, 0.0, s, 0.0])
    mount = Pose([0.15, 0.0, 0.08])
    return ArmModel(joints, tcp, mount, name="z1-like-6dof")


def planar_2r_arm(link: float = 1.0, limits=(-math.pi, math.pi)) -> ArmModel:
    z = np.array([0.0, 0.0, 1.0])
    return ArmModel(
        (Joint(z, Pose(), limits), Joint(z, Pose([link, 0.0, 0.0]), limits)),
        Pose([link, 0.0, 0.0]),
        name="planar-2r",
    )


# --------------------------------------------------------------------------
# numba kernels; scratch buffers are allocated once per solve, not per iteration


@nb.njit(cache=True)
def _fk_kernel(axes, origins, tcp, q, jpos, jaxis, R, p, tmp):
    """TCP rotation ``R`` and position ``p`` (written in place).

    Also fills world-frame joint positions and axes for the Jacobian.
    """
    n = axes.shape[0]
    for r in range(3):
        p[r] = 0.0
        for c in range(3):
            R[r, c] = 1.0 if r == c else 0.0
    for i in range(n):
        o = origins[i]
        for r in range(3):
            p[r] += R[r, 0] * o[0, 3] + R[r, 1] * o[1, 3] + R[r, 2] * o[2, 3]
        for r in range(3):
            for c in range(3):
                tmp[r, c] = R[r, 0] * o[0, c] + R[r, 1] * o[1, c] + R[r, 2] * o[2, c]
        ax, ay, az = axes[i, 0], axes[i, 1], axes[i, 2]
        for r in range(3):
            jpos[i, r] = p[r]
            jaxis[i, r] = tmp[r, 0] * ax + tmp[r, 1] * ay + tmp[r, 2] * az
        # Rodrigues rotation about the joint axis
        cth = math.cos(q[i])
        sth = math.sin(q[i])
        v = 1.0 - cth
        m00 = cth + ax * ax * v
        m01 = ax * ay * v - az * sth
        m02 = ax * az * v + ay * sth
        m10 = ay * ax * v + az * sth
        m11 = cth + ay * ay * v
        m12 = ay * az * v - ax * sth
        m20 = az * ax * v - ay * sth
        m21 = az * ay * v + ax * sth
        m22 = cth + az * az * v
        for r in range(3):
            a0, a1, a2 = tmp[r, 0], tmp[r, 1], tmp[r, 2]
            R[r, 0] = a0 * m00 + a1 * m10 + a2 * m20
            R[r, 1] = a0 * m01 + a1 * m11 + a2 * m21
            R[r, 2] = a0 * m02 + a1 * m12 + a2 * m22
    for r in range(3):
        p[r] += R[r, 0] * tcp[0, 3] + R[r, 1] * tcp[1, 3] + R[r, 2] * tcp[2, 3]
    for r in range(3):
        for c in range(3):
            tmp[r, c] = R[r, 0] * tcp[0, c] + R[r, 1] * tcp[1, c] + R[r, 2] * tcp[2, c]
    for r in range(3):
        for c in range(3):
            R[r, c] = tmp[r, c]


@nb.njit(cache=True)
def _jac_kernel(jpos, jaxis, p, J):
    n = jpos.shape[0]
    for i in range(n):
        a0, a1, a2 = jaxis[i, 0], jaxis[i, 1], jaxis[i, 2]
        d0 = p[0] - jpos[i, 0]
        d1 = p[1] - jpos[i, 1]
        d2 = p[2] - jpos[i, 2]
        J[0, i] = a1 * d2 - a2 * d1
        J[1, i] = a2 * d0 - a0 * d2
        J[2, i] = a0 * d1 - a1 * d0
        J[3, i] = a0
        J[4, i] = a1
        J[5, i] = a2


@nb.njit(cache=True)
def _rot_log_rel(Rt, R, out, m):
    """Axis-angle vector of ``Rt @ R.T`` via its quaternion (robust near 0 and pi)."""
    for r in range(3):
        for c in range(3):
            m[r, c] = Rt[r, 0] * R[c, 0] + Rt[r, 1] * R[c, 1] + Rt[r, 2] * R[c, 2]
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > m[0, 0] and tr > m[1, 1] and tr > m[2, 2]:
        s = math.sqrt(1.0 + tr) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    vn = math.sqrt(x * x + y * y + z * z)
    if vn < 1e-300:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        return 0.0
    ang = 2.0 * math.atan2(vn, w)
    out[0] = x / vn * ang
    out[1] = y / vn * ang
    out[2] = z / vn * ang
    return ang


@nb.njit(cache=True)
def _dls_step(J, active, e, lam2, A, y, dq):
    """dq = J_a^T (J_a J_a^T + lam2 I)^-1 e over the active columns (Cholesky solve)."""
    n = J.shape[1]
    for r in range(6):
        for c in range(r + 1):
            s = 0.0
            for k in range(n):
                if active[k]:
                    s += J[r, k] * J[c, k]
            if r == c:
                s += lam2
            A[r, c] = s
    # in-place lower Cholesky; a tiny floor keeps undamped singular solves finite
    for j in range(6):
        s = A[j, j]
        for k in range(j):
            s -= A[j, k] * A[j, k]
        if s < 1e-18:
            s = 1e-18
        d = math.sqrt(s)
        A[j, j] = d
        for i in range(j + 1, 6):
            t = A[i, j]
            for k in range(j):
                t -= A[i, k] * A[j, k]
            A[i, j] = t / d
    for i in range(6):
        t = e[i]
        for k in range(i):
            t -= A[i, k] * y[k]
        y[i] = t / A[i, i]
    for i in range(5, -1, -1):
        t = y[i]
        for k in range(i + 1, 6):
            t -= A[k, i] * y[k]
        y[i] = t / A[i, i]
    for k in range(n):
        if active[k]:
            s = 0.0
            for r in range(6):
                s += J[r, k] * y[r]
            dq[k] = s
        else:
            dq[k] = 0.0


@nb.njit(cache=True)
def _ik_kernel(axes, origins, tcp, lo, hi, Rt, pt, seed, q, damping, max_iters,
               pos_tol, rot_tol, step_clamp, stall_iters):
    """Damped least squares from ``seed``; result written to ``q``. Returns success."""
    n = axes.shape[0]
    for k in range(n):
        q[k] = seed[k]
    jpos = np.empty((n, 3))
    jaxis = np.empty((n, 3))
    R = np.empty((3, 3))
    tmp = np.empty((3, 3))
    p = np.empty(3)
    er = np.empty(3)
    J = np.empty((6, n))
    A = np.empty((6, 6))
    y = np.empty(6)
    e = np.empty(6)
    dq = np.empty(n)
    active = np.empty(n, dtype=np.bool_)
    lam2 = damping * damping
    best = 1e300
    since_best = 0
    for it in range(max_iters + 1):
        _fk_kernel(axes, origins, tcp, q, jpos, jaxis, R, p, tmp)
        e0 = pt[0] - p[0]
        e1 = pt[1] - p[1]
        e2 = pt[2] - p[2]
        pe = math.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
        re = _rot_log_rel(Rt, R, er, tmp)
        if pe < pos_tol and re < rot_tol:
            return True
        if it == max_iters:
            break
        err = pe + re
        if err < best * 0.999:
            best = err
            since_best = 0
        else:
            since_best += 1
            if since_best >= stall_iters:
                break
        _jac_kernel(jpos, jaxis, p, J)
        e[0] = e0
        e[1] = e1
        e[2] = e2
        e[3] = er[0]
        e[4] = er[1]
        e[5] = er[2]
        for k in range(n):
            active[k] = True
        _dls_step(J, active, e, lam2, A, y, dq)
        # active set: drop joints resting on a limit that the step pushes past
        for _ in range(n):
            changed = False
            for k in range(n):
                if active[k] and ((q[k] <= lo[k] and dq[k] < 0.0) or (q[k] >= hi[k] and dq[k] > 0.0)):
                    active[k] = False
                    changed = True
            if not changed:
                break
            _dls_step(J, active, e, lam2, A, y, dq)
        m = 0.0
        for k in range(n):
            if abs(dq[k]) > m:
                m = abs(dq[k])
        scale = 1.0
        if m > step_clamp:
            scale = step_clamp / m
        for k in range(n):
            v = q[k] + dq[k] * scale
            if v < lo[k]:
                v = lo[k]
            elif v > hi[k]:
                v = hi[k]
            q[k] = v
    return False


@nb.njit(cache=True)
def _reachable_kernel(axes, origins, tcp, lo, hi, Rt, pt, seeds, q, damping, max_iters,
                      pos_tol, rot_tol, step_clamp, stall_iters):
    for s in range(seeds.shape[0]):
        if _ik_kernel(axes, origins, tcp, lo, hi, Rt, pt, seeds[s], q, damping,
                      max_iters, pos_tol, rot_tol, step_clamp, stall_iters):
            return True
    return False


@nb.njit(cache=True, parallel=True)
def _sweep_kernel(axes, origins, tcp, lo, hi, positions, rotations, seeds, max_reach,
                  damping, max_iters, pos_tol, rot_tol, step_clamp, stall_iters, out):
    """out[v, o] = reachable(position v, rotation o) from any seed."""
    m = positions.shape[0]
    k = rotations.shape[0]
    n = axes.shape[0]
    for v in nb.prange(m):
        pt = positions[v]
        if math.sqrt(pt[0] * pt[0] + pt[1] * pt[1] + pt[2] * pt[2]) > max_reach:
            for o in range(k):
                out[v, o] = False
            continue
        q = np.empty(n)
        for o in range(k):
            out[v, o] = _reachable_kernel(axes, origins, tcp, lo, hi, rotations[o], pt, seeds, q,
                                          damping, max_iters, pos_tol, rot_tol, step_clamp,
                                          stall_iters)


# --------------------------------------------------------------------------
# public API


def _check_q(arm: ArmModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != arm.n_joints:
        raise ConfigurationError(
            f"joint vector has length {q.shape[0]}, arm has {arm.n_joints} joints"
        )
    return np.ascontiguousarray(q)


def _fk_arrays(arm: ArmModel, q):
    axes, origins, tcp = arm.packed
    n = arm.n_joints
    jpos, jaxis = np.empty((n, 3)), np.empty((n, 3))
    R, p = np.empty((3, 3)), np.empty(3)
    _fk_kernel(axes, origins, tcp, q, jpos, jaxis, R, p, np.empty((3, 3)))
    return R, p, jpos, jaxis


def forward_kinematics(arm: ArmModel, q) -> Pose:
    """TCP pose in the arm-base frame."""
    R, p, _, _ = _fk_arrays(arm, _check_q(arm, q))
    return Pose(p, matrix_to_quat(R))


def jacobian(arm: ArmModel, q) -> np.ndarray:
    """Geometric 6xn Jacobian at the TCP, linear rows first, arm-base frame."""
    _, p, jpos, jaxis = _fk_arrays(arm, _check_q(arm, q))
    J = np.empty((6, arm.n_joints))
    _jac_kernel(jpos, jaxis, p, J)
    return J


def within_limits(arm: ArmModel, q) -> bool:
    q = _check_q(arm, q)
    return bool(np.all(q >= arm.lower) and np.all(q <= arm.upper))


def _target_arrays(target: Pose):
    pt = np.ascontiguousarray(target.translation, dtype=float)
    Rt = np.ascontiguousarray(quat_to_matrix(target.rotation))
    return Rt, pt


def solve_ik(arm: ArmModel, target: Pose, seed, params: Optional[IkParams] = None):
    """Damped least squares on the 6-D pose error twist.

    The error twist stacks the translation error with the axis-angle of the
    relative rotation; joints are clamped to their limits after every step.
    Returns the joint vector on success and ``None`` when the target was not
    reached (``None`` is the reachability signal, not an error).
    """
    params = params or IkParams()
    seed = _check_q(arm, seed)
    if not np.all(np.isfinite(seed)):
        raise ValueError("seed contains NaN/inf")
    Rt, pt = _target_arrays(target)
    if np.linalg.norm(pt) > arm.max_reach:
        return None
    axes, origins, tcp = arm.packed
    q = np.empty(arm.n_joints)
    ok = _ik_kernel(
        axes, origins, tcp, arm.lower, arm.upper, Rt, pt,
        np.clip(seed, arm.lower, arm.upper), q,
        params.damping, params.max_iters, params.pos_tol, params.rot_tol,
        params.step_clamp, params.stall_iters,
    )
    return q if ok else None


def ik_seeds(arm: ArmModel, n: int, rng_seed: int = 0) -> np.ndarray:
    """Mid-limits followed by ``n - 1`` uniform draws from ``default_rng(rng_seed)``."""
    if n < 1:
        raise ConfigurationError("need at least one seed")
    rng = np.random.default_rng(rng_seed)
    extra = rng.uniform(arm.lower, arm.upper, size=(n - 1, arm.n_joints))
    return np.ascontiguousarray(np.vstack([arm.mid_limits[None, :], extra]))


def reachable_any_seed(arm: ArmModel, target: Pose, seeds: np.ndarray,
                       params: Optional[IkParams] = None) -> bool:
    """True if :func:`solve_ik` succeeds from at least one of ``seeds``."""
    params = params or IkParams()
    Rt, pt = _target_arrays(target)
    if np.linalg.norm(pt) > arm.max_reach:
        return False
    axes, origins, tcp = arm.packed
    return bool(_reachable_kernel(
        axes, origins, tcp, arm.lower, arm.upper, Rt, pt, np.ascontiguousarray(seeds),
        np.empty(arm.n_joints), params.damping, params.max_iters, params.pos_tol,
        params.rot_tol, params.step_clamp, params.stall_iters,
    ))


def sweep_reachability(arm: ArmModel, positions, rotations, seeds,
                       params: Optional[IkParams] = None) -> np.ndarray:
    """Boolean (n_positions, n_rotations) table of :func:`reachable_any_seed`."""
    params = params or IkParams()
    positions = np.ascontiguousarray(positions, dtype=float)
    rotations = np.ascontiguousarray(rotations, dtype=float)
    out = np.zeros((positions.shape[0], rotations.shape[0]), dtype=np.bool_)
    axes, origins, tcp = arm.packed
    _sweep_kernel(
        axes, origins, tcp, arm.lower, arm.upper, positions, rotations,
        np.ascontiguousarray(seeds, dtype=float), arm.max_reach, params.damping,
        params.max_iters, params.pos_tol, params.rot_tol, params.step_clamp,
        params.stall_iters, out,
    )
    return out
