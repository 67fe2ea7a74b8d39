"""Metric-semantic map construction.

Each frame is projected into its image, points are grouped by the mask
polygons they land in, object masks keep only their largest DBSCAN cluster,
and the survivors are merged into a sparse voxel map whose points hold a
deduplicated set of embeddings with occurrence counts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from terrain_sg.clustering import dbscan, largest_cluster
from terrain_sg.core import CameraIntrinsics, Pose, as_embedding
from terrain_sg.dataset import MaskRecord, SceneDataset
from terrain_sg.errors import ConfigError, DimensionMismatchError, EmbeddingError, ZeroNormError
from terrain_sg.geometry import points_in_polygon

log = logging.getLogger(__name__)


class ResolveMode(str, Enum):
    AVG = "avg"
    MAX = "max"


@dataclass(frozen=True)
class FusionConfig:
    dedup_threshold: float = 0.9
    dbscan_eps: float = 0.5
    dbscan_min_pts: int = 5
    voxel_leaf: float = 0.5
    assoc_radius: float | None = None  # None -> voxel_leaf
    max_range: float = 100.0
    filter_terrain_masks: bool = False

    def __post_init__(self):
        if not (0 < self.dedup_threshold <= 1):
            raise ConfigError("dedup_threshold must lie in (0, 1]")
        for name in ("dbscan_eps", "voxel_leaf", "max_range"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.dbscan_min_pts < 1:
            raise ConfigError("dbscan_min_pts must be at least 1")
        if self.assoc_radius is not None and not self.assoc_radius > 0:
            raise ConfigError("assoc_radius must be positive")

    @property
    def radius(self) -> float:
        return self.voxel_leaf if self.assoc_radius is None else self.assoc_radius


@dataclass(frozen=True)
class MapPoint:
    """Read-only snapshot of one map point."""

    position: np.ndarray
    slots: tuple[tuple[np.ndarray, int], ...]
    terrain: int | None = None


class SemanticGlobalMap:
    """Sparse voxel map with per-point embedding slots.

    Stored vectors live in a shared table (one copy per distinct vector);
    each point keeps ``[table_index, count]`` slots in insertion order.
    """

    def __init__(self, voxel_leaf: float = 0.5, embedding_dim: int | None = None):
        if not voxel_leaf > 0:
            raise ConfigError("voxel_leaf must be positive")
        self.voxel_leaf = float(voxel_leaf)
        self.embedding_dim = embedding_dim
        self.terrain_names: dict[int, str] = {}
        self._vectors: list[np.ndarray] = []
        self._unit: list[np.ndarray] = []
        self._vector_index: dict[bytes, int] = {}
        self._sim: dict[tuple[int, int], float] = {}
        self._positions: list[tuple[float, float, float]] = []
        self._slots: list[list[list[int]]] = []
        self._terrain: list[int | None] = []
        self._voxels: dict[tuple[int, int, int], int] = {}
        self._cache: dict = {}

    def __len__(self) -> int:
        return len(self._positions)

    # -- embedding table -------------------------------------------------
    def register(self, embedding) -> int:
        e = as_embedding(embedding)
        if self.embedding_dim is None:
            self.embedding_dim = int(e.shape[0])
        elif e.shape[0] != self.embedding_dim:
            raise DimensionMismatchError(f"map dimension {self.embedding_dim}, got {e.shape[0]}")
        key = e.tobytes()
        idx = self._vector_index.get(key)
        if idx is None:
            n = float(np.linalg.norm(e))
            if n == 0.0:
                raise ZeroNormError("zero embedding cannot be stored")
            idx = len(self._vectors)
            e = e.copy()
            e.setflags(write=False)
            self._vectors.append(e)
            self._unit.append(e / n)
            self._vector_index[key] = idx
        return idx

    def similarity(self, i: int, j: int) -> float:
        if i == j:
            return 1.0
        key = (i, j) if i < j else (j, i)
        s = self._sim.get(key)
        if s is None:
            s = float(np.dot(self._unit[i], self._unit[j]))
            self._sim[key] = s
        return s

    @property
    def vectors(self) -> list[np.ndarray]:
        return list(self._vectors)

    # -- points ----------------------------------------------------------
    def voxel_key(self, p) -> tuple[int, int, int]:
        k = np.floor(np.asarray(p, dtype=np.float64) / self.voxel_leaf).astype(np.int64)
        return int(k[0]), int(k[1]), int(k[2])

    def voxel_center(self, key) -> tuple[float, float, float]:
        h = self.voxel_leaf
        return ((key[0] + 0.5) * h, (key[1] + 0.5) * h, (key[2] + 0.5) * h)

    def _point_for_voxel(self, key) -> int:
        idx = self._voxels.get(key)
        if idx is None:
            idx = len(self._positions)
            self._voxels[key] = idx
            self._positions.append(self.voxel_center(key))
            self._slots.append([])
            self._terrain.append(None)
        return idx

    def _receive(self, point: int, emb: int, count: int, threshold: float) -> None:
        slots = self._slots[point]
        best, best_sim = -1, -math.inf
        for k, (idx, _) in enumerate(slots):
            s = self.similarity(emb, idx)
            if s > best_sim:
                best, best_sim = k, s
        if best >= 0 and best_sim >= threshold:
            slots[best][1] += count
        else:
            slots.append([emb, count])

    def point(self, i: int) -> MapPoint:
        return MapPoint(
            np.array(self._positions[i]),
            tuple((self._vectors[idx], c) for idx, c in self._slots[i]),
            self._terrain[i],
        )

    @property
    def points(self) -> list[MapPoint]:
        return [self.point(i) for i in range(len(self))]

    def positions(self) -> np.ndarray:
        if "positions" not in self._cache:
            self._cache["positions"] = np.array(self._positions, dtype=np.float64).reshape(-1, 3)
        return self._cache["positions"]

    def terrain_labels(self) -> np.ndarray:
        return np.array([-1 if t is None else t for t in self._terrain], dtype=np.int64)

    def slot_table(self, i: int) -> list[tuple[int, int]]:
        return [(idx, c) for idx, c in self._slots[i]]

    def total_slots(self) -> int:
        return sum(len(s) for s in self._slots)

    def total_assignments(self) -> int:
        return sum(c for s in self._slots for _, c in s)

    def nearest(self, p) -> tuple[int, float]:
        if "tree" not in self._cache:
            self._cache["tree"] = cKDTree(self.positions())
        d, i = self._cache["tree"].query(np.asarray(p, dtype=np.float64))
        return int(i), float(d)

    def resolved_embeddings(self, mode: ResolveMode | str) -> np.ndarray:
        """``(N, D)`` matrix of per-point embeddings under ``mode``."""
        mode = ResolveMode(mode)
        key = ("resolved", mode)
        if key not in self._cache:
            dim = self.embedding_dim or 0
            out = np.empty((len(self), dim))
            for i in range(len(self)):
                out[i] = _resolve_slots(self._vectors, self._slots[i], mode)
            self._cache[key] = out
        return self._cache[key]

    def invalidate(self) -> None:
        self._cache.clear()

    # -- construction helpers (used by persistence) ----------------------
    def _add_raw_point(self, position, slots, terrain) -> None:
        key = self.voxel_key(position)
        if key in self._voxels:
            raise ValueError(f"two points in voxel {key}")
        self._voxels[key] = len(self._positions)
        self._positions.append(tuple(float(c) for c in position))
        self._slots.append([[int(i), int(c)] for i, c in slots])
        self._terrain.append(terrain)


def _resolve_slots(vectors, slots, mode: ResolveMode) -> np.ndarray:
    if not slots:
        raise EmbeddingError("map point has no embeddings")
    if mode is ResolveMode.MAX:
        best_idx, best_count = slots[0]
        for idx, c in slots[1:]:
            if c > best_count:
                best_idx, best_count = idx, c
        return vectors[best_idx].copy()
    total = sum(c for _, c in slots)
    acc = np.zeros_like(vectors[slots[0][0]])
    for idx, c in slots:
        acc += c * vectors[idx]
    return acc / total


def resolve_point_embedding(p: MapPoint, mode: ResolveMode | str) -> np.ndarray:
    """Collapse a point's slots: count-weighted mean or most frequent slot."""
    mode = ResolveMode(mode)
    if not p.slots:
        raise EmbeddingError("map point has no embeddings")
    vectors = [e for e, _ in p.slots]
    return _resolve_slots(vectors, [[k, c] for k, (_, c) in enumerate(p.slots)], mode)


# -- per-frame stages ------------------------------------------------------


def project_points(
    points,
    intr: CameraIntrinsics,
    extrinsic: Pose | None = None,
    max_range: float = math.inf,
) -> list[tuple[int, float, float, float]]:
    """Pinhole-project sensor-frame points into the image.

    ``extrinsic`` maps sensor coordinates into the camera optical frame
    (x right, y down, z forward); identity when the scan is already there.
    Returns ``(index, u, v, depth)`` for points with positive depth, range
    within ``max_range`` and pixel inside ``[0, width) x [0, height)``.
    """
    idx, uv, depth = project_points_array(points, intr, extrinsic, max_range)
    return [(int(i), float(u), float(v), float(d)) for i, (u, v), d in zip(idx, uv, depth)]


def project_points_array(points, intr: CameraIntrinsics, extrinsic: Pose | None = None, max_range: float = math.inf):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = pts if extrinsic is None else extrinsic.apply(pts)
    z = cam[:, 2]
    rng = np.linalg.norm(pts, axis=1)
    ok = (z > 0) & (rng <= max_range)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    ok &= (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    idx = np.flatnonzero(ok)
    return idx, np.stack([u[idx], v[idx]], axis=1), z[idx]


def associate_masks(projected, masks: list[MaskRecord]) -> dict[int, np.ndarray]:
    """Map mask index -> indices of projected points inside its polygon.

    ``projected`` is a sequence of ``(index, u, v[, depth])`` tuples or an
    ``(N, >=3)`` array. Points inside a terrain mask are withheld from every
    non-terrain mask.
    """
    arr = np.asarray(projected, dtype=np.float64)
    if arr.size == 0:
        return {k: np.empty(0, dtype=np.int64) for k in range(len(masks))}
    arr = arr.reshape(len(arr), -1)
    index = arr[:, 0].astype(np.int64)
    uv = arr[:, 1:3]
    inside = [points_in_polygon(uv, m.polygon) for m in masks]
    on_terrain = np.zeros(len(uv), dtype=bool)
    for m, hit in zip(masks, inside):
        if m.is_terrain:
            on_terrain |= hit
    out = {}
    for k, (m, hit) in enumerate(zip(masks, inside)):
        if not m.is_terrain:
            hit = hit & ~on_terrain
        out[k] = index[hit]
    return out


def largest_cluster_filter(points3d, cfg: FusionConfig) -> np.ndarray:
    """Indices of the largest DBSCAN cluster (noise never returned)."""
    pts = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return np.empty(0, dtype=np.int64)
    return largest_cluster(dbscan(pts, cfg.dbscan_eps, cfg.dbscan_min_pts))


def merge_points(smap: SemanticGlobalMap, world_points, embedding, terrain: int | None, cfg: FusionConfig) -> None:
    """Merge points that all carry the same embedding (one mask's worth)."""
    pts = np.asarray(world_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return
    emb = smap.register(embedding)
    keys = np.floor(pts / smap.voxel_leaf).astype(np.int64)
    uniq, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    order = np.argsort(first, kind="stable")
    h = smap.voxel_leaf
    radius = cfg.radius
    for k in order:
        key = (int(uniq[k, 0]), int(uniq[k, 1]), int(uniq[k, 2]))
        n = int(counts[k])
        if radius < h * math.sqrt(3) / 2:
            # Only frame points within the radius of their voxel center associate.
            members = np.flatnonzero(np.all(keys == uniq[k], axis=1))
            center = (uniq[k] + 0.5) * h
            n = int(np.sum(np.linalg.norm(pts[members] - center, axis=1) <= radius))
            if n == 0:
                continue
        i = smap._point_for_voxel(key)
        smap._receive(i, emb, n, cfg.dedup_threshold)
        if terrain is not None and smap._terrain[i] is None:
            smap._terrain[i] = terrain
    smap.invalidate()


def merge_frame(smap: SemanticGlobalMap, frame_points, cfg: FusionConfig) -> SemanticGlobalMap:
    """Merge ``(world_point, embedding, terrain)`` triples into ``smap`` in order.

    Consecutive triples sharing one embedding are merged as a batch, which is
    equivalent to merging them one at a time.
    """
    run_pts: list = []
    run_emb = None
    run_terrain = None
    for p, e, t in frame_points:
        e = np.asarray(e, dtype=np.float64)
        if run_pts and (t != run_terrain or not (e is run_emb or np.array_equal(e, run_emb))):
            merge_points(smap, run_pts, run_emb, run_terrain, cfg)
            run_pts = []
        if not run_pts:
            run_emb, run_terrain = e, t
        run_pts.append(p)
    if run_pts:
        merge_points(smap, run_pts, run_emb, run_terrain, cfg)
    return smap


def frame_assignments(dataset: SceneDataset, frame, cfg: FusionConfig, points=None):
    """Yield ``(mask_index, world_points, embedding, terrain)`` for one frame."""
    pts = dataset.load_points(frame) if points is None else points
    world = frame.pose.apply(pts)
    idx, uv, depth = project_points_array(pts, frame.intrinsics, max_range=cfg.max_range)
    projected = np.column_stack([idx, uv]) if len(idx) else np.empty((0, 3))
    per_mask = associate_masks(projected, list(frame.masks))
    for k, mask in enumerate(frame.masks):
        members = per_mask[k]
        if len(members) == 0:
            continue
        if not mask.is_terrain or cfg.filter_terrain_masks:
            keep = largest_cluster_filter(world[members], cfg)
            members = members[keep]
        if len(members) == 0:
            continue
        yield k, world[members], dataset.embeddings[mask.embedding_id], mask.terrain


def build_map(dataset: SceneDataset, cfg: FusionConfig | None = None, repeat: int = 1) -> SemanticGlobalMap:
    """Replay every frame in timestamp order into a fresh map.

    ``repeat`` replays each frame that many times in a row.
    """
    cfg = cfg or FusionConfig()
    smap = SemanticGlobalMap(cfg.voxel_leaf, dataset.embedding_dim)
    smap.terrain_names = {t.id: t.name for t in dataset.terrain_classes}
    frames = sorted(dataset.frames, key=lambda f: f.timestamp)
    for n, frame in enumerate(frames):
        pts = dataset.load_points(frame)
        batches = list(frame_assignments(dataset, frame, cfg, pts))
        for _ in range(repeat):
            for _, world, emb, terrain in batches:
                merge_points(smap, world, emb, terrain, cfg)
        log.debug("frame %d: %d masks merged, map size %d", n, len(batches), len(smap))
    return smap
