"""Rigid transforms and small geometric helpers shared across modules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def wrap_angle(a):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, np.pi, w)
    # values already in range are returned untouched
    w = np.where((a > -np.pi) & (a <= np.pi), a, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


def rpy_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Z-Y-X (yaw, pitch, roll) Euler angles to a rotation matrix."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Sensor or robot pose: translation in meters, rotation as roll/pitch/yaw."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        r = np.array(wrap_angle(np.array(self.rpy, dtype=float).reshape(3)), dtype=float).reshape(3)
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rpy", r)

    @classmethod
    def from_xyz_yaw(cls, x: float, y: float, z: float, yaw: float = 0.0) -> "Pose":
        return cls(np.array([x, y, z]), np.array([0.0, 0.0, yaw]))

    @classmethod
    def from_array(cls, a) -> "Pose":
        a = np.asarray(a, dtype=float).reshape(6)
        return cls(a[:3], a[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rpy])

    @property
    def rotation(self) -> np.ndarray:
        return rpy_to_matrix(*self.rpy)

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        """Map (N, 3) points from this pose's frame into the parent frame."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        return pts @ self.rotation.T + self.translation

    def inverse_transform_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        return (pts - self.translation) @ self.rotation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.translation, other.translation) and np.array_equal(self.rpy, other.rpy)
        )

    def __hash__(self):
        return hash((self.translation.tobytes(), self.rpy.tobytes()))
