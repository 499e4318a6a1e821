"""Rigid-body pose algebra.

Conventions
-----------
* Euler angles are intrinsic Z-Y-X (yaw, then pitch, then roll):
  ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
* A :class:`PoseSE3` maps body-frame points into the world frame.
* A :class:`RelativePose` between poses ``a`` and ``b`` is expressed in the
  body frame of ``a``, so ``compose(a, rel.to_pose()) == b``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.spatial.transform import Rotation

GIMBAL_TOL = 1e-9
ROT_TOL = 1e-9


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite value in pose data")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EulerAngles:
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    # set by rotmat_to_euler when the pitch sits on the +-pi/2 singularity
    gimbal_lock: bool = field(default=False, compare=False)

    def as_array(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw])


@dataclass(frozen=True, eq=False)
class PoseSE3:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        if np.max(np.abs(R.T @ R - np.eye(3))) > ROT_TOL or abs(np.linalg.det(R) - 1.0) > ROT_TOL:
            raise ValueError("rotation is not orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "PoseSE3":
        return cls(np.eye(3), t)

    @classmethod
    def from_euler(cls, r: EulerAngles, t=(0.0, 0.0, 0.0)) -> "PoseSE3":
        return cls(euler_to_rotmat(r), t)

    @classmethod
    def from_matrix(cls, m) -> "PoseSE3":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, q_xyzw, t) -> "PoseSE3":
        return cls(Rotation.from_quat(q_xyzw).as_matrix(), t)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def quaternion(self) -> np.ndarray:
        """Unit quaternion ``(qx, qy, qz, qw)`` with ``qw >= 0``."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    def is_close(self, other: "PoseSE3", tol: float = 1e-9) -> bool:
        return bool(
            np.max(np.abs(self.rotation - other.rotation)) < tol
            and np.max(np.abs(self.translation - other.translation)) < tol
        )

    def __eq__(self, other):
        if not isinstance(other, PoseSE3):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        return compose(self, other)

    def __repr__(self):
        r = rotmat_to_euler(self.rotation)
        return (f"PoseSE3(t={np.round(self.translation, 6).tolist()}, "
                f"rpy={np.round(r.as_array(), 6).tolist()})")


@dataclass(frozen=True, eq=False)
class RelativePose:
    """6-DoF egomotion ``[t, r]`` between two consecutive frames."""

    t: np.ndarray
    r: EulerAngles = EulerAngles()

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t, (3,)))

    @classmethod
    def zero(cls) -> "RelativePose":
        return cls(np.zeros(3), EulerAngles())

    @classmethod
    def from_vector(cls, y) -> "RelativePose":
        y = np.asarray(y, dtype=float).reshape(6)
        return cls(y[:3], EulerAngles(*y[3:]))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.r.as_array()])

    def to_pose(self) -> PoseSE3:
        return PoseSE3(euler_to_rotmat(self.r), self.t)

    def __eq__(self, other):
        if not isinstance(other, RelativePose):
            return NotImplemented
        return bool(np.array_equal(self.as_vector(), other.as_vector()))

    def __hash__(self):
        return hash(self.as_vector().tobytes())

    def __repr__(self):
        return f"RelativePose({np.round(self.as_vector(), 6).tolist()})"


def euler_to_rotmat(r: EulerAngles) -> np.ndarray:
    cr, sr = math.cos(r.roll), math.sin(r.roll)
    cp, sp = math.cos(r.pitch), math.sin(r.pitch)
    cy, sy = math.cos(r.yaw), math.sin(r.yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def rotmat_to_euler(R) -> EulerAngles:
    """Inverse of :func:`euler_to_rotmat` with pitch in [-pi/2, pi/2].

    At the pitch singularity roll is pinned to zero, the remaining rotation
    is folded into yaw and the result carries ``gimbal_lock=True``.
    """
    R = np.asarray(R, dtype=float)
    cos_pitch = math.hypot(R[0, 0], R[1, 0])
    pitch = math.atan2(-R[2, 0], cos_pitch)
    if cos_pitch < GIMBAL_TOL:
        # R[0,1] = sin(roll - yaw) at +pi/2 and -sin(roll + yaw) at -pi/2
        yaw = math.atan2(-R[0, 1], R[1, 1])
        return EulerAngles(0.0, math.copysign(math.pi / 2, pitch), yaw, gimbal_lock=True)
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return EulerAngles(roll, pitch, yaw)


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Apply ``b`` then ``a``: ``x -> Ra (Rb x + tb) + ta``."""
    return PoseSE3(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: PoseSE3) -> PoseSE3:
    rt = p.rotation.T
    return PoseSE3(rt, -rt @ p.translation)


def relative_between(a: PoseSE3, b: PoseSE3) -> RelativePose:
    rel = compose(inverse(a), b)
    return RelativePose(rel.translation, rotmat_to_euler(rel.rotation))


def transform_points(p: PoseSE3, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    return pts @ p.rotation.T + p.translation


def wrap_angle(x):
    """Wrap angles to (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    w = np.mod(x + math.pi, 2 * math.pi) - math.pi
    return np.where(w == -math.pi, math.pi, w)


def compose_all(poses: Iterable[PoseSE3]) -> PoseSE3:
    out = PoseSE3.identity()
    for p in poses:
        out = compose(out, p)
    return out
