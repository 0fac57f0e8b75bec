"""
Pinhole Camera Geometry
Projection, unprojection and rigid transforms shared by every pipeline stage.

Conventions: extrinsics map world to camera (camera point = R @ C + t), +z is
forward, the image origin is the top-left corner and i is the column.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np

from errors import InvalidInputError, InvalidRotationError

BEHIND_EPS = 1e-9
ROTATION_TOL = 1e-6


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class CameraIntrinsics:
    """Focal lengths, principal point and raster size, all in pixels"""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInputError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @classmethod
    def from_matrix(cls, K: Sequence, width: int, height: int) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=np.float64).reshape(3, 3)
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]), int(width), int(height))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RigidTransform:
    """x' = R @ x + t, with R a proper rotation"""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise InvalidRotationError(f"expected 3x3 rotation and 3-vector, got {R.shape} and {t.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidRotationError("non-finite transform")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ROTATION_TOL:
            raise InvalidRotationError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise InvalidRotationError("rotation determinant is not +1")
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "t", _frozen(t))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, Rt: Sequence):
        """Build from a row-major 3x4 [R|t] (or 4x4) matrix"""
        M = np.asarray(Rt, dtype=np.float64)
        M = M.reshape(4, 4) if M.size == 16 else M.reshape(3, 4)
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.t

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return bool(np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t))

    def __hash__(self):
        return hash((self.R.tobytes(), self.t.tobytes()))


class CameraPose(RigidTransform):
    """World-to-camera extrinsics"""

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates"""
        return -self.R.T @ self.t


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform that applies b first, then a"""
    return type(a)(a.R @ b.R, a.R @ b.t + a.t)


def invert(a: RigidTransform) -> RigidTransform:
    return type(a)(a.R.T, -a.R.T @ a.t)


class PixelCoord(NamedTuple):
    """Continuous pixel coordinates; i is the column, j the row"""

    i: float
    j: float

    def in_bounds(self, width: int, height: int) -> bool:
        return 0 <= self.i < width and 0 <= self.j < height

    def to_index(self) -> Tuple[int, int]:
        """Nearest integer (column, row) for raster lookup"""
        return int(math.floor(self.i + 0.5)), int(math.floor(self.j + 0.5))


class Projection(NamedTuple):
    pixel: PixelCoord
    z: float


class Behind:
    """Projection result for points at or behind the camera plane"""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self):
        return False

    def __repr__(self):
        return "BEHIND"


BEHIND = Behind()


def project(C: Sequence[float], pose: RigidTransform, K: CameraIntrinsics) -> Union[Projection, Behind]:
    x, y, z = pose.R @ np.asarray(C, dtype=np.float64) + pose.t
    if z <= BEHIND_EPS:
        return BEHIND
    return Projection(PixelCoord(K.fx * x / z + K.cx, K.fy * y / z + K.cy), float(z))


def unproject(p: Tuple[float, float], d: float, pose: RigidTransform, K: CameraIntrinsics) -> np.ndarray:
    if not (d > 0 and math.isfinite(d)):
        raise InvalidInputError(f"depth must be positive and finite, got {d}")
    i, j = p
    cam = np.array([d * (i - K.cx) / K.fx, d * (j - K.cy) / K.fy, d])
    return pose.R.T @ (cam - pose.t)


def project_points(points: np.ndarray, pose: RigidTransform, K: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized project: returns (N, 2) pixels and (N,) depths; rows behind the camera are NaN"""
    cam = np.asarray(points, dtype=np.float64).reshape(-1, 3) @ pose.R.T + pose.t
    z = cam[:, 2]
    pixels = np.full((len(cam), 2), np.nan)
    front = z > BEHIND_EPS
    pixels[front, 0] = K.fx * cam[front, 0] / z[front] + K.cx
    pixels[front, 1] = K.fy * cam[front, 1] / z[front] + K.cy
    return pixels, z


def unproject_pixels(pixels: np.ndarray, depths: np.ndarray, pose: RigidTransform, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized unproject of (N, 2) pixels with (N,) positive depths"""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    if depths.size and not np.all(depths > 0):
        raise InvalidInputError("all depths must be positive")
    cam = np.column_stack([
        depths * (pixels[:, 0] - K.cx) / K.fx,
        depths * (pixels[:, 1] - K.cy) / K.fy,
        depths,
    ])
    return (cam - pose.t) @ pose.R


def rotation_between(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    """Smallest rotation taking unit direction a onto unit direction b"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    v = np.cross(a, b)
    s = np.linalg.norm(v)
    c = float(np.dot(a, b))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about any axis orthogonal to a
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        axis = axis / np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    vx = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + vx + vx @ vx * ((1.0 - c) / (s * s))


def rotation_z(degrees: float) -> np.ndarray:
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def look_at(eye: Sequence[float], target: Sequence[float], up: Sequence[float] = (0.0, 0.0, 1.0)) -> CameraPose:
    """World-to-camera pose for a camera at eye looking at target (image y points down)"""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise InvalidInputError("view direction is parallel to up")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.vstack([right, down, forward])
    return CameraPose(R, -R @ eye)
