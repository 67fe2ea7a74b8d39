"""Density clustering with a fully specified, order-independent labelling.

Labelling rules (shared with the brute-force reference in
``terrain_sg.scenegen.oracles``):

* a point is *core* if at least ``min_pts`` points (itself included) lie
  within distance ``eps`` (inclusive);
* clusters are the connected components of the core points under the
  ``eps``-neighbour relation, numbered by their smallest core index;
* a non-core point within ``eps`` of a core point is a border point and joins
  the lowest-numbered cluster among its core neighbours;
* everything else is noise (label ``-1``).

This is exactly what the classic sequential algorithm produces when it scans
points in index order.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

NOISE = -1


def _neighbor_pairs(points: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    n = len(points)
    if math.isinf(eps):
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        return i.ravel(), j.ravel()
    tree = cKDTree(points)
    pairs = tree.query_pairs(eps, output_type="ndarray")
    diag = np.arange(n)
    if len(pairs) == 0:
        return diag, diag
    i = np.concatenate([pairs[:, 0], pairs[:, 1], diag])
    j = np.concatenate([pairs[:, 1], pairs[:, 0], diag])
    return i, j


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Label ``points`` (N, d); returns an int array with ``-1`` for noise."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    pts = pts.reshape(n, -1)
    i, j = _neighbor_pairs(pts, eps)
    counts = np.bincount(i, minlength=n)
    core = counts >= min_pts
    if not core.any():
        return labels

    core_idx = np.flatnonzero(core)
    keep = core[i] & core[j]
    adj = coo_matrix((np.ones(int(keep.sum()), dtype=np.int8), (i[keep], j[keep])), shape=(n, n))
    _, comp = connected_components(adj.tocsr(), directed=False)
    # Renumber components by their smallest core index.
    order: dict[int, int] = {}
    for idx in core_idx:
        c = int(comp[idx])
        if c not in order:
            order[c] = len(order)
    cluster_of = np.full(n, NOISE, dtype=np.int64)
    for idx in core_idx:
        cluster_of[idx] = order[int(comp[idx])]
    labels[core_idx] = cluster_of[core_idx]

    # Border points: lowest-numbered cluster among core neighbours.
    border_edge = (~core[i]) & core[j]
    if border_edge.any():
        bi = i[border_edge]
        bc = cluster_of[j[border_edge]]
        best = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(best, bi, bc)
        has = best != np.iinfo(np.int64).max
        labels[has] = best[has]
    return labels


def cluster_members(labels: np.ndarray) -> list[np.ndarray]:
    """Member index arrays (ascending) for clusters ``0..k-1``."""
    k = int(labels.max()) + 1 if len(labels) else 0
    return [np.flatnonzero(labels == c) for c in range(k)]


def largest_cluster(labels: np.ndarray) -> np.ndarray:
    """Indices of the biggest cluster; ties go to the cluster holding the lowest index."""
    best: np.ndarray | None = None
    for members in cluster_members(labels):
        if best is None or len(members) > len(best) or (
            len(members) == len(best) and members[0] < best[0]
        ):
            best = members
    return best if best is not None else np.empty(0, dtype=np.int64)
