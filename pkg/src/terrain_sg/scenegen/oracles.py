"""Slow reference implementations used to cross-check the fast paths."""

from __future__ import annotations

import heapq
import math
from collections import deque

import numpy as np
from scipy.spatial import cKDTree

from terrain_sg.boxes import oriented_bbox
from terrain_sg.core import cosine_similarity
from terrain_sg.errors import DisconnectedUnreachableError, ProhibitedUnreachableError
from terrain_sg.fusion import SemanticGlobalMap, resolve_point_embedding
from terrain_sg.places import OccupancyGrid, PlacesLayer
from terrain_sg.planner import PathResult, TerrainPolicy
from terrain_sg.query import QueryConfig, RetrievalResult, RetrievedBox


def naive_dbscan(points, eps: float, min_pts: int) -> list[int]:
    """Textbook DBSCAN over an explicit distance matrix, scanning in index order."""
    pts = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    n = len(pts)
    neigh = [np.flatnonzero(np.sqrt(((pts - pts[i]) ** 2).sum(axis=1)) <= eps).tolist() for i in range(n)]
    labels = [None] * n
    cluster = -1
    for i in range(n):
        if labels[i] is not None:
            continue
        if len(neigh[i]) < min_pts:
            labels[i] = -1
            continue
        cluster += 1
        labels[i] = cluster
        queue = deque(neigh[i])
        while queue:
            j = queue.popleft()
            if labels[j] == -1:
                labels[j] = cluster  # border point
            if labels[j] is not None:
                continue
            labels[j] = cluster
            if len(neigh[j]) >= min_pts:
                queue.extend(neigh[j])
    return [-1 if label is None else label for label in labels]


def oracle_retrieval(
    smap: SemanticGlobalMap, query, cfg: QueryConfig | None = None, places: PlacesLayer | None = None
) -> RetrievalResult:
    """Linear scan over every map point followed by the naive clusterer."""
    cfg = cfg or QueryConfig()
    hits, sims = [], []
    for i in range(len(smap)):
        s = cosine_similarity(resolve_point_embedding(smap.point(i), cfg.mode), query)
        if s >= cfg.alpha:
            hits.append(i)
            sims.append(s)
    if not hits:
        return RetrievalResult()
    pos = [tuple(smap.point(i).position) for i in hits]
    labels = naive_dbscan(pos, cfg.dbscan_eps, cfg.dbscan_min_pts)
    boxes = []
    for c in sorted({lab for lab in labels if lab >= 0}):
        members = [k for k, lab in enumerate(labels) if lab == c]
        box = oriented_bbox(np.array([pos[k] for k in members]))
        place = None
        if places is not None and places.nodes:
            best = None
            for node in places.nodes:
                d2 = (node.position[0] - box.center[0]) ** 2 + (node.position[1] - box.center[1]) ** 2
                if best is None or (d2, node.id) < best:
                    best = (d2, node.id)
            place = best[1]
        boxes.append(
            RetrievedBox(box, max(sims[k] for k in members), len(members), place, np.array([hits[k] for k in members]))
        )
    boxes.sort(key=lambda b: (-b.score, int(b.members.min())))
    return RetrievalResult(boxes)


def oracle_shortest_path(layer: PlacesLayer, start: int, goal: int, policy: TerrainPolicy | None = None) -> PathResult:
    """Plain Dijkstra on the multiplier-weighted graph minus prohibited nodes."""
    policy = policy or TerrainPolicy()
    terrain = {n.id: n.terrain for n in layer.nodes}
    for nid in (start, goal):
        if nid not in terrain:
            raise KeyError(nid)
        if terrain[nid] in policy.prohibited:
            raise ProhibitedUnreachableError(f"node {nid} lies on prohibited terrain")
    graph: dict[int, list[tuple[int, float, float]]] = {}
    full: dict[int, list[int]] = {nid: [] for nid in terrain}
    for a, b, length in layer.edges:
        full[a].append(b)
        full[b].append(a)
        if terrain[a] in policy.prohibited or terrain[b] in policy.prohibited:
            continue
        w = length * max(policy.multiplier.get(terrain[a], 1.0), policy.multiplier.get(terrain[b], 1.0))
        graph.setdefault(a, []).append((b, w, length))
        graph.setdefault(b, []).append((a, w, length))
    dist = {start: 0.0}
    length_to = {start: 0.0}
    prev: dict[int, int] = {}
    done = set()
    heap = [(0.0, start)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == goal:
            break
        for v, w, length in graph.get(u, ()):
            if d + w < dist.get(v, math.inf):
                dist[v] = d + w
                length_to[v] = length_to[u] + length
                prev[v] = u
                heapq.heappush(heap, (d + w, v))
    if goal not in done:
        seen, queue = {start}, deque([start])
        while queue:
            u = queue.popleft()
            for v in full[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if goal in seen:
            raise ProhibitedUnreachableError(f"{goal} unreachable without prohibited terrain")
        raise DisconnectedUnreachableError(f"{goal} not connected to {start}")
    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    return PathResult(path[::-1], dist[goal], length_to[goal])


def brute_force_clearance(grid: OccupancyGrid) -> np.ndarray:
    """Exact distance (m) from each cell center to the nearest obstacle cell center."""
    obstacles = np.argwhere(~grid.free)
    cells = np.argwhere(np.ones_like(grid.free))
    d, _ = cKDTree(obstacles).query(cells)
    out = d.reshape(grid.free.shape) * grid.resolution
    out[~grid.free] = 0.0
    return out
