from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import DegenerateDirection, InvalidGeometry

PARALLEL_TOL = 1e-12


def wrap_angle(angle: float) -> float:
    """Map an angle into [-pi, pi)."""
    return float((angle + np.pi) % (2 * np.pi) - np.pi)


@dataclass(frozen=True)
class PoseParams:
    rank: int = 0
    offset: float = 0.0
    rotation: float = 0.0
    flip: bool = False

    def __post_init__(self):
        if not np.isfinite(self.offset):
            raise ValueError("offset must be finite")
        object.__setattr__(self, "rotation", wrap_angle(self.rotation))
        object.__setattr__(self, "flip", bool(self.flip))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix, tol: float = 1e-6) -> "RigidTransform":
        m = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        r = m[:3, :3]
        if not np.allclose(m[3], [0, 0, 0, 1], atol=tol) or not np.allclose(r.T @ r, np.eye(3), atol=tol):
            raise InvalidGeometry("matrix is not a rigid transform")
        if np.linalg.det(r) < 0:
            raise InvalidGeometry("matrix contains a reflection")
        return cls(r, m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_list(self) -> list[float]:
        """16 floats, row-major."""
        return self.matrix.reshape(-1).tolist()

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def apply_direction(self, directions) -> np.ndarray:
        return np.asarray(directions, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        """Composition: (self @ other) applies ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return np.allclose(self.matrix, other.matrix, atol=atol)


def rotation_about(axis, angle: float) -> np.ndarray:
    axis = _unit(axis)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > 1e-12 or not np.isfinite(norm):
        raise DegenerateDirection("direction has zero length")
    return v / norm


def minimal_rotation(src, dst) -> np.ndarray:
    """Smallest rotation taking unit vector ``src`` onto ``dst``."""
    src, dst = _unit(src), _unit(dst)
    cross = np.cross(src, dst)
    sin, cos = np.linalg.norm(cross), float(src @ dst)
    if sin > PARALLEL_TOL:
        return rotation_about(cross / sin, np.arctan2(sin, cos))
    if cos > 0:
        return np.eye(3)
    # antiparallel: half turn about the coordinate axis least aligned with src,
    # made orthogonal to src
    basis = np.eye(3)[int(np.argmin(np.abs(src)))]
    perp = basis - (basis @ src) * src
    return rotation_about(perp, np.pi)


def transform_from_axes(axis1, axis2, pose: PoseParams) -> RigidTransform:
    """Place part 1 so its axis lies on part 2's axis.

    The part-1 axis direction is turned onto part 2's (negated when flipped),
    then spun by ``pose.rotation`` about that shared direction, and its origin
    is moved ``pose.offset`` along it from part 2's origin.
    """
    d1 = _unit(axis1.direction)
    d2 = _unit(axis2.direction)
    if pose.flip:
        d2 = -d2
    rot = rotation_about(d2, pose.rotation) @ minimal_rotation(d1, d2)
    o1 = np.asarray(axis1.origin, dtype=np.float64)
    o2 = np.asarray(axis2.origin, dtype=np.float64)
    return RigidTransform(rot, o2 + pose.offset * d2 - rot @ o1)
