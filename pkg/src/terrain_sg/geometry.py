"""Planar polygon helpers for image-space masks."""

from __future__ import annotations

import numpy as np

BOUNDARY_TOL = 1e-9


def points_in_polygon(points: np.ndarray, polygon) -> np.ndarray:
    """Vectorised point-in-polygon test; points on an edge count as inside.

    Args:
        points: ``(N, 2)`` array of query points.
        polygon: sequence of ``(u, v)`` vertices, implicitly closed.

    Returns:
        Boolean mask of length ``N``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    poly = np.asarray(polygon, dtype=np.float64).reshape(-1, 2)
    x = pts[:, 0][:, None]
    y = pts[:, 1][:, None]
    x0, y0 = poly[:, 0][None, :], poly[:, 1][None, :]
    rolled = np.roll(poly, -1, axis=0)
    x1, y1 = rolled[:, 0][None, :], rolled[:, 1][None, :]

    # Even-odd crossing count against a ray towards +x.
    straddles = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    crossings = np.sum(straddles & (x < x_cross), axis=1)
    inside = (crossings % 2) == 1

    # Distance to each edge for the boundary rule.
    dx, dy = x1 - x0, y1 - y0
    seg_len2 = dx * dx + dy * dy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(seg_len2 > 0, ((x - x0) * dx + (y - y0) * dy) / seg_len2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    px, py = x0 + t * dx - x, y0 + t * dy - y
    on_edge = np.any(px * px + py * py <= BOUNDARY_TOL**2, axis=1)
    return inside | on_edge


def polygon_area(polygon) -> float:
    poly = np.asarray(polygon, dtype=np.float64).reshape(-1, 2)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def polygon_centroid(polygon) -> np.ndarray:
    poly = np.asarray(polygon, dtype=np.float64).reshape(-1, 2)
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    if a == 0:
        return poly.mean(axis=0)
    return np.array([((x + xn) * cross).sum() / (6 * a), ((y + yn) * cross).sum() / (6 * a)])


def box_corners_2d(center_xy, half_extents_xy, yaw: float) -> np.ndarray:
    """Counter-clockwise corners of a yawed rectangle."""
    c, s = np.cos(yaw), np.sin(yaw)
    hx, hy = half_extents_xy
    local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.asarray(center_xy, dtype=np.float64)
