"""Geometric and semantic value types plus the small amount of math they need.

Points are plain ``float64`` numpy arrays of shape ``(3,)`` (or ``(N, 3)`` for
batches) and embeddings are 1-D ``float64`` arrays. Embeddings are stored as
given; similarity is always cosine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from terrain_sg.errors import ConfigError, DimensionMismatchError, ZeroNormError

QUAT_NORM_TOL = 1e-9
DEFAULT_EMBEDDING_DIM = 64


def as_vec3(p) -> np.ndarray:
    v = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite point {p!r}")
    return v


def as_embedding(values, dim: int | None = None) -> np.ndarray:
    e = np.asarray(values, dtype=np.float64)
    if e.ndim != 1:
        raise DimensionMismatchError(f"embedding must be 1-D, got shape {e.shape}")
    if dim is not None and e.shape[0] != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {e.shape[0]}")
    if not np.all(np.isfinite(e)):
        raise ValueError("embedding has non-finite entries")
    return e


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two embeddings.

    Raises:
        DimensionMismatchError: if the vectors differ in length.
        ZeroNormError: if either vector is all zeros.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch {a.shape} vs {b.shape}")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine similarity of a zero vector is undefined")
    s = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, s))


def cosine_similarities(matrix: np.ndarray, query) -> np.ndarray:
    """Row-wise cosine similarity of ``matrix`` (N, D) against one query."""
    q = np.asarray(query, dtype=np.float64)
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != q.shape[0]:
        raise DimensionMismatchError(f"dimension mismatch {m.shape} vs {q.shape}")
    qn = math.sqrt(float(np.dot(q, q)))
    # Row-wise dots keep results bit-identical to cosine_similarity.
    norms = np.sqrt(np.fromiter((np.dot(r, r) for r in m), np.float64, len(m)))
    if qn == 0.0 or np.any(norms == 0.0):
        raise ZeroNormError("cosine similarity of a zero vector is undefined")
    dots = np.fromiter((np.dot(r, q) for r in m), np.float64, len(m))
    return np.clip(dots / (norms * qn), -1.0, 1.0)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ZeroNormError("cannot normalize a zero vector")
    return v / n


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = (float(c) for c in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(r: np.ndarray) -> tuple[float, float, float, float]:
    """Rotation matrix to a (w, x, y, z) quaternion with w >= 0."""
    r = np.asarray(r, dtype=np.float64)
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    q = np.array([w, x, y, z])
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return tuple(float(c) for c in q)


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping sensor-frame coordinates to the world frame.

    ``rotation`` is a unit quaternion ordered ``(w, x, y, z)``.
    """

    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    _matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = tuple(float(c) for c in self.translation)
        q = tuple(float(c) for c in self.rotation)
        if len(t) != 3 or len(q) != 4:
            raise ValueError("pose needs a 3-vector and a 4-quaternion")
        if not all(math.isfinite(c) for c in t + q):
            raise ValueError("pose has non-finite components")
        if abs(math.sqrt(sum(c * c for c in q)) - 1.0) > QUAT_NORM_TOL:
            raise ValueError(f"quaternion {q} is not unit length")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "_matrix", quat_to_matrix(q))

    @classmethod
    def from_matrix(cls, rotation: np.ndarray, translation) -> "Pose":
        return cls(tuple(np.asarray(translation, dtype=float)), matrix_to_quat(rotation))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        half = 0.5 * yaw
        return cls(tuple(translation), (math.cos(half), 0.0, 0.0, math.sin(half)))

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix.copy()

    @property
    def position(self) -> np.ndarray:
        return np.array(self.translation)

    def inverse(self) -> "Pose":
        w, x, y, z = self.rotation
        conj = (w, -x, -y, -z)
        t = -(self._matrix.T @ np.array(self.translation))
        return Pose(tuple(t), conj)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an ``(N, 3)`` array (or a single point) into the world frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self._matrix.T + np.array(self.translation)


def transform_point(p, pose: Pose) -> np.ndarray:
    """Rotate ``p`` by the pose rotation, then translate."""
    return pose.apply(as_vec3(p))


@dataclass(frozen=True)
class TerrainClass:
    name: str
    id: int

    def __post_init__(self):
        if not self.name:
            raise ValueError("terrain class name must be nonempty")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError("principal point must lie inside the image")

    @property
    def half_fov(self) -> float:
        """Horizontal half field of view in radians."""
        return math.atan(self.width / (2.0 * self.fx))

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }
