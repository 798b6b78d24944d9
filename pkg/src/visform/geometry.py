"""Core geometry: quaternions, rotations, pinhole cameras, planar shape error."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

_QUAT_NORM_TOL = 1e-12
_ROT_TOL = 1e-9


def canonical_quat(q: NDArray[np.float64]) -> NDArray[np.float64]:
    """Flip quaternion sign so w > 0; on w == 0 the first nonzero component is positive.

    q and -q encode the same rotation, so a fixed sign makes comparisons and
    de-duplication deterministic.
    """
    q = np.asarray(q, dtype=np.float64)
    for c in q:
        if c != 0.0:
            return -q if c < 0.0 else q
    return q


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion (w, x, y, z) with canonical sign w >= 0."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        norm2 = self.w**2 + self.x**2 + self.y**2 + self.z**2
        if abs(norm2 - 1.0) > 1e-9:
            raise ValueError(f"quaternion not normalized: |q|^2 = {norm2}")

    @classmethod
    def from_components(cls, w: float, x: float, y: float, z: float) -> "UnitQuaternion":
        """Normalize and canonicalize arbitrary components."""
        arr = np.array([w, x, y, z], dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if norm < _QUAT_NORM_TOL:
            raise ValueError("cannot normalize near-zero quaternion")
        arr = canonical_quat(arr / norm)
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "UnitQuaternion":
        axis = np.asarray(axis, dtype=np.float64)
        norm = float(np.linalg.norm(axis))
        if norm < _QUAT_NORM_TOL:
            raise ValueError("axis must be nonzero")
        half = 0.5 * angle
        s = math.sin(half) / norm
        return cls.from_components(math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)

    @classmethod
    def from_array(cls, q) -> "UnitQuaternion":
        q = np.asarray(q, dtype=np.float64)
        return cls.from_components(q[0], q[1], q[2], q[3])

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion.from_components(self.w, -self.x, -self.y, -self.z)

    def multiply(self, other: "UnitQuaternion") -> "UnitQuaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return UnitQuaternion.from_components(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 + y1 * w2 + z1 * x2 - x1 * z2,
            w1 * z2 + z1 * w2 + x1 * y2 - y1 * x2,
        )

    def rotate(self, v) -> NDArray[np.float64]:
        return quat_to_rotation(self) @ np.asarray(v, dtype=np.float64)

    def angle_to(self, other: "UnitQuaternion") -> float:
        """Rotation angle (rad) between the two attitudes, in [0, pi]."""
        dot = abs(float(self.as_array() @ other.as_array()))
        return 2.0 * math.acos(min(1.0, dot))


def quat_to_rotation(q: UnitQuaternion) -> NDArray[np.float64]:
    """3x3 rotation matrix of a unit quaternion."""
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def rotation_to_quat(rot: NDArray[np.float64]) -> UnitQuaternion:
    """Quaternion of a rotation matrix (Shepperd's method, canonical sign)."""
    r = np.asarray(rot, dtype=np.float64)
    if not is_rotation(r):
        raise ValueError("matrix is not a rotation within tolerance")
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = (0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s)
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = ((r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s)
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 - r[0, 0] + r[1, 1] - r[2, 2]) * 2.0
        q = ((r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s)
    else:
        s = math.sqrt(1.0 - r[0, 0] - r[1, 1] + r[2, 2]) * 2.0
        q = ((r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s)
    return UnitQuaternion.from_components(*q)


def is_rotation(r: NDArray[np.float64], tol: float = _ROT_TOL) -> bool:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        return False
    ortho = np.max(np.abs(r.T @ r - np.eye(3)))
    return bool(ortho <= tol and abs(np.linalg.det(r) - 1.0) <= tol)


def rotz(angle: float) -> NDArray[np.float64]:
    """Rotation about +z by `angle` radians."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_planar(v, theta: float) -> NDArray[np.float64]:
    """Rotate a 2-vector counterclockwise by theta radians."""
    v = np.asarray(v, dtype=np.float64)
    c, s = math.cos(theta), math.sin(theta)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; square pixels, no distortion."""

    focal: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image rectangle")


@dataclass(frozen=True)
class CameraPose:
    """World camera pose: center in meters plus world-to-camera rotation."""

    position: NDArray[np.float64]
    rotation: NDArray[np.float64]

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        if not is_rotation(self.rotation):
            raise ValueError("camera rotation is not a rotation matrix")


def project(intrinsics: CameraIntrinsics, pose: CameraPose, landmark) -> tuple[float, float] | None:
    """Project a world point to pixels; None when behind the camera or out of frame."""
    p_cam = pose.rotation @ (np.asarray(landmark, dtype=np.float64) - pose.position)
    if p_cam[2] <= 0.0:
        return None
    u = intrinsics.focal * p_cam[0] / p_cam[2] + intrinsics.cx
    v = intrinsics.focal * p_cam[1] / p_cam[2] + intrinsics.cy
    if not (0.0 <= u <= intrinsics.width and 0.0 <= v <= intrinsics.height):
        return None
    return (float(u), float(v))


def project_many(
    intrinsics: CameraIntrinsics, pose: CameraPose, landmarks: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """Vectorized projection.

    Returns:
        (pixels, visible): pixels is (N, 2); rows where visible is False are
        meaningless.
    """
    pts = np.asarray(landmarks, dtype=np.float64).reshape(-1, 3)
    p_cam = (pts - pose.position) @ pose.rotation.T
    z = p_cam[:, 2]
    safe_z = np.where(z > 0.0, z, 1.0)
    u = intrinsics.focal * p_cam[:, 0] / safe_z + intrinsics.cx
    v = intrinsics.focal * p_cam[:, 1] / safe_z + intrinsics.cy
    visible = (
        (z > 0.0)
        & (u >= 0.0)
        & (u <= intrinsics.width)
        & (v >= 0.0)
        & (v <= intrinsics.height)
    )
    return np.stack([u, v], axis=1), visible


def backproject(pixel, intrinsics: CameraIntrinsics) -> NDArray[np.float64]:
    """Homogeneous bearing (x, y, 1) of a pixel."""
    u, v = float(pixel[0]), float(pixel[1])
    if not (math.isfinite(u) and math.isfinite(v)):
        raise ValueError("pixel coordinates must be finite")
    return np.array([(u - intrinsics.cx) / intrinsics.focal, (v - intrinsics.cy) / intrinsics.focal, 1.0])


@dataclass(frozen=True)
class Configuration:
    """Stacked planar positions of n agents: (x1, y1, ..., xn, yn) in meters."""

    stacked: NDArray[np.float64]

    def __post_init__(self) -> None:
        v = np.asarray(self.stacked, dtype=np.float64).ravel()
        if v.size < 4 or v.size % 2 != 0:
            raise ValueError("configuration must stack >= 2 planar points")
        object.__setattr__(self, "stacked", v)

    @classmethod
    def from_points(cls, points) -> "Configuration":
        return cls(np.asarray(points, dtype=np.float64).reshape(-1))

    @property
    def n(self) -> int:
        return self.stacked.size // 2

    @property
    def points(self) -> NDArray[np.float64]:
        return self.stacked.reshape(-1, 2)


def _as_points(q) -> NDArray[np.float64]:
    if isinstance(q, Configuration):
        return q.points
    arr = np.asarray(q, dtype=np.float64)
    return arr.reshape(-1, 2)


def formation_error(q, spec) -> float:
    """Distance from configuration q to the similarity orbit of spec.

    Minimizes ||q - (translation + rotation * positive scale applied to spec)||
    over the full similarity group (no reflections) and divides by the norm of
    the centered spec. Zero iff q is a similarity transform of spec.
    """
    qp = _as_points(q)
    sp = _as_points(spec)
    if qp.shape != sp.shape:
        raise ValueError(f"configuration sizes differ: {qp.shape[0]} vs {sp.shape[0]}")
    zq = qp[:, 0] + 1j * qp[:, 1]
    zs = sp[:, 0] + 1j * sp[:, 1]
    zq = zq - zq.mean()
    zs = zs - zs.mean()
    denom = float(np.linalg.norm(zs))
    if denom < 1e-12:
        raise ValueError("degenerate spec: all points coincide")
    # Optimal complex scale = rotation + nonnegative magnitude; reflections excluded.
    s = np.vdot(zs, zq) / np.vdot(zs, zs)
    return float(np.linalg.norm(zq - s * zs) / denom)
