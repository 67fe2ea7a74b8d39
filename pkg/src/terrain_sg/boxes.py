"""Oriented 3-D boxes: fitting and overlap."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import MultiPoint, Polygon

from terrain_sg.geometry import box_corners_2d

EXTENT_FLOOR = 0.01
# Relative eigenvalue gap below which the 2-D covariance is treated as isotropic.
ISOTROPY_TOL = 1e-6


@dataclass(frozen=True)
class OrientedBox:
    """Box rotated by ``yaw`` about +z. ``extents`` are half-lengths."""

    center: tuple[float, float, float]
    extents: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "extents", tuple(float(c) for c in self.extents))
        object.__setattr__(self, "yaw", float(self.yaw))
        if len(self.center) != 3 or len(self.extents) != 3:
            raise ValueError("box center and extents must be 3-vectors")
        if not all(e > 0 for e in self.extents):
            raise ValueError(f"box extents must be positive, got {self.extents}")

    def footprint(self) -> Polygon:
        return Polygon(box_corners_2d(self.center[:2], self.extents[:2], self.yaw))

    @property
    def volume(self) -> float:
        ex, ey, ez = self.extents
        return 8.0 * ex * ey * ez

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        d = pts - np.array(self.center)
        lx = c * d[:, 0] + s * d[:, 1]
        ly = -s * d[:, 0] + c * d[:, 1]
        ex, ey, ez = self.extents
        return (np.abs(lx) <= ex + tol) & (np.abs(ly) <= ey + tol) & (np.abs(d[:, 2]) <= ez + tol)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "extents": list(self.extents), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "OrientedBox":
        return cls(tuple(d["center"]), tuple(d["extents"]), float(d["yaw"]))


def _min_area_yaw(xy: np.ndarray) -> float:
    hull = MultiPoint([tuple(p) for p in xy]).convex_hull
    if not isinstance(hull, Polygon):
        return 0.0
    ring = np.asarray(hull.exterior.coords)
    best_yaw, best_area = 0.0, math.inf
    for a, b in zip(ring[:-1], ring[1:]):
        yaw = math.atan2(b[1] - a[1], b[0] - a[0]) % (math.pi / 2)
        c, s = math.cos(yaw), math.sin(yaw)
        lx = c * xy[:, 0] + s * xy[:, 1]
        ly = -s * xy[:, 0] + c * xy[:, 1]
        area = (lx.max() - lx.min()) * (ly.max() - ly.min())
        if area < best_area - 1e-12:
            best_yaw, best_area = yaw, area
    return best_yaw


def oriented_bbox(points) -> OrientedBox:
    """Fit a yawed box to ``points`` (N, 3).

    The yaw follows the principal axis of the planar (x, y) covariance, folded
    into ``[0, pi)``. When the covariance is isotropic the principal axis is
    undefined and the minimum-area hull-edge orientation is used instead.
    Extents are half-ranges along the box axes, floored at 1 cm.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot fit a box to zero points")
    xy = pts[:, :2]
    yaw = 0.0
    if len(pts) >= 2:
        cov = np.cov(xy, rowvar=False, bias=True)
        vals, vecs = np.linalg.eigh(cov)
        spread = vals[1]
        if spread > 0:
            if (vals[1] - vals[0]) <= ISOTROPY_TOL * spread:
                yaw = _min_area_yaw(xy)
            else:
                major = vecs[:, 1]
                yaw = math.atan2(major[1], major[0]) % math.pi
    c, s = math.cos(yaw), math.sin(yaw)
    lx = c * xy[:, 0] + s * xy[:, 1]
    ly = -s * xy[:, 0] + c * xy[:, 1]
    mid_x = 0.5 * (lx.max() + lx.min())
    mid_y = 0.5 * (ly.max() + ly.min())
    cx = c * mid_x - s * mid_y
    cy = s * mid_x + c * mid_y
    z0, z1 = pts[:, 2].min(), pts[:, 2].max()
    extents = (
        max(0.5 * (lx.max() - lx.min()), EXTENT_FLOOR),
        max(0.5 * (ly.max() - ly.min()), EXTENT_FLOOR),
        max(0.5 * (z1 - z0), EXTENT_FLOOR),
    )
    return OrientedBox((cx, cy, 0.5 * (z0 + z1)), extents, yaw)


def box_iou(a: OrientedBox, b: OrientedBox) -> float:
    """3-D IoU: footprint polygon intersection times vertical overlap."""
    inter_xy = a.footprint().intersection(b.footprint()).area
    if inter_xy <= 0:
        return 0.0
    az0, az1 = a.center[2] - a.extents[2], a.center[2] + a.extents[2]
    bz0, bz1 = b.center[2] - b.extents[2], b.center[2] + b.extents[2]
    dz = min(az1, bz1) - max(az0, bz0)
    if dz <= 0:
        return 0.0
    inter = inter_xy * dz
    union = a.volume + b.volume - inter
    return float(min(1.0, inter / union))
