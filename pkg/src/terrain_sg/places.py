"""Terrain-aware place nodes.

Every terrain class gets its own 2-D occupancy grid (FREE where that terrain
was mapped). A brushfire wavefront from the obstacle cells yields a clearance
field and a Voronoi skeleton; the skeleton is subsampled into place nodes,
per-terrain graphs are stitched together, and each node receives a terrain
embedding and a view embedding averaged over nearby camera frames.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from terrain_sg.dataset import SceneDataset
from terrain_sg.errors import ConfigError, GridError
from terrain_sg.fusion import SemanticGlobalMap

FREE = True
OBSTACLE = False

_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass
class OccupancyGrid:
    """Row-major grid; ``free[iy, ix]`` is True where the terrain is present."""

    origin: tuple[float, float]
    resolution: float
    free: np.ndarray

    @property
    def width(self) -> int:
        return int(self.free.shape[1])

    @property
    def height(self) -> int:
        return int(self.free.shape[0])

    @property
    def is_empty(self) -> bool:
        return self.free.size == 0

    def cell_center(self, iy: int, ix: int) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (
            int(math.floor((y - self.origin[1]) / self.resolution)),
            int(math.floor((x - self.origin[0]) / self.resolution)),
        )

    def is_free(self, iy: int, ix: int) -> bool:
        return 0 <= iy < self.height and 0 <= ix < self.width and bool(self.free[iy, ix])


@dataclass
class BrushfireResult:
    """Clearance (meters; 0 on obstacles), nearest-obstacle cell and skeleton mask."""

    distance: np.ndarray
    nearest_obstacle: np.ndarray  # (H, W, 2) int, (iy, ix) of the obstacle basin
    gvd: np.ndarray
    grid: OccupancyGrid

    @property
    def basin(self) -> np.ndarray:
        return self.nearest_obstacle[..., 0] * self.grid.width + self.nearest_obstacle[..., 1]

    def gvd_cells(self) -> list[tuple[int, int]]:
        return [tuple(c) for c in np.argwhere(self.gvd)]


@dataclass
class PlaceNode:
    id: int
    position: tuple[float, float]
    terrain: int
    clearance: float
    terrain_embedding: np.ndarray | None = None
    view_embedding: np.ndarray | None = None


@dataclass
class PlacesLayer:
    nodes: list[PlaceNode] = field(default_factory=list)
    edges: list[tuple[int, int, float]] = field(default_factory=list)

    def node(self, nid: int) -> PlaceNode:
        return self._index()[nid]

    def _index(self) -> dict[int, PlaceNode]:
        return {n.id: n for n in self.nodes}

    def ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def positions(self) -> np.ndarray:
        return np.array([n.position for n in self.nodes], dtype=np.float64).reshape(-1, 2)

    def adjacency(self) -> dict[int, list[tuple[int, float]]]:
        adj: dict[int, list[tuple[int, float]]] = {n.id: [] for n in self.nodes}
        for a, b, length in self.edges:
            adj[a].append((b, length))
            adj[b].append((a, length))
        for v in adj.values():
            v.sort()
        return adj

    def degree(self) -> dict[int, int]:
        deg = {n.id: 0 for n in self.nodes}
        for a, b, _ in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def components(self) -> list[list[int]]:
        ids = self.ids()
        if not ids:
            return []
        pos = {nid: k for k, nid in enumerate(ids)}
        rows = [pos[a] for a, _, _ in self.edges]
        cols = [pos[b] for _, b, _ in self.edges]
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(ids), len(ids)))
        n, labels = connected_components(adj, directed=False)
        comps: list[list[int]] = [[] for _ in range(n)]
        for nid, lab in zip(ids, labels):
            comps[lab].append(nid)
        return sorted(comps, key=lambda c: min(c))

    def nearest_node(self, xy) -> int:
        """Id of the place nearest to ``xy`` in the plane (ties: smaller id)."""
        pos = self.positions()
        d2 = np.sum((pos - np.asarray(xy, dtype=np.float64)[:2]) ** 2, axis=1)
        best = np.flatnonzero(d2 == d2.min())
        return min(self.nodes[k].id for k in best)


@dataclass(frozen=True)
class PlacesConfig:
    resolution: float = 0.5
    spacing: float = 2.0
    view_radius: float = 20.0
    bridge_components: bool = True

    def __post_init__(self):
        for name in ("resolution", "spacing", "view_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")


def rasterize_terrain(smap: SemanticGlobalMap, terrain: int, resolution: float = 0.5) -> OccupancyGrid:
    """FREE cells where at least one ``terrain`` point lands; padded by one cell."""
    labels = smap.terrain_labels()
    pts = smap.positions()[labels == terrain] if len(smap) else np.empty((0, 3))
    if len(pts) == 0:
        return OccupancyGrid((0.0, 0.0), resolution, np.zeros((0, 0), dtype=bool))
    cells = np.floor(pts[:, :2] / resolution).astype(np.int64)
    lo = cells.min(axis=0) - 1
    hi = cells.max(axis=0) + 1
    width, height = int(hi[0] - lo[0] + 1), int(hi[1] - lo[1] + 1)
    free = np.zeros((height, width), dtype=bool)
    free[cells[:, 1] - lo[1], cells[:, 0] - lo[0]] = True
    return OccupancyGrid((float(lo[0] * resolution), float(lo[1] * resolution)), resolution, free)


def brushfire_gvd(grid: OccupancyGrid) -> BrushfireResult:
    """Brushfire distance field and generalized Voronoi skeleton.

    The wavefront starts from every obstacle cell and spreads over
    8-connected FREE cells in order of Euclidean distance, each cell
    inheriting the obstacle cell (basin) its wave came from. A FREE cell is on
    the skeleton when some neighbour's basin is neither the same as nor
    adjacent to its own, and the cell is at least as far from obstacles as
    that neighbour (which keeps the skeleton one or two cells thick).
    """
    free = grid.free
    if free.size == 0 or not free.any():
        raise GridError("grid has no FREE cells")
    if free.all():
        raise GridError("grid has no OBSTACLE cells")
    h, w = free.shape
    res = grid.resolution
    dist = np.full((h, w), np.inf)
    ref = np.full((h, w, 2), -1, dtype=np.int64)
    heap: list[tuple[float, int, int]] = []

    obst = np.argwhere(~free)
    dist[~free] = 0.0
    ref[~free] = obst
    # Seed only obstacle cells that touch FREE space.
    padded = np.pad(free, 1, constant_values=False)
    touches = np.zeros_like(free)
    for dy, dx in _NEIGHBORS:
        touches |= padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    for iy, ix in np.argwhere(~free & touches):
        heap.append((0.0, int(iy), int(ix)))
    heapq.heapify(heap)

    while heap:
        d, iy, ix = heapq.heappop(heap)
        if d > dist[iy, ix]:
            continue
        oy, ox = ref[iy, ix]
        for dy, dx in _NEIGHBORS:
            ny, nx = iy + dy, ix + dx
            if not (0 <= ny < h and 0 <= nx < w) or not free[ny, nx]:
                continue
            nd = math.hypot(ny - oy, nx - ox)
            if nd < dist[ny, nx]:
                dist[ny, nx] = nd
                ref[ny, nx] = (oy, ox)
                heapq.heappush(heap, (nd, ny, nx))

    gvd = np.zeros((h, w), dtype=bool)
    big = np.iinfo(np.int64).max // 4
    ref_p = np.pad(ref, ((1, 1), (1, 1), (0, 0)), constant_values=-big)
    dist_p = np.pad(dist, 1, constant_values=np.inf)
    for dy, dx in _NEIGHBORS:
        nref = ref_p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        ndist = dist_p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        valid = nref[..., 0] > -big
        cheb = np.maximum(np.abs(nref[..., 0] - ref[..., 0]), np.abs(nref[..., 1] - ref[..., 1]))
        gvd |= free & valid & (cheb > 1) & (dist >= ndist)
    return BrushfireResult(dist * res, ref, gvd, grid)


def _segment_free(grid: OccupancyGrid, a, b) -> bool:
    length = math.dist(a, b)
    steps = max(1, int(math.ceil(length / (0.25 * grid.resolution))))
    for k in range(steps + 1):
        t = k / steps
        iy, ix = grid.cell_of(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))
        if not grid.is_free(iy, ix):
            return False
    return True


def extract_place_nodes(
    bf: BrushfireResult,
    spacing: float = 2.0,
    terrain: int = 0,
    first_id: int = 0,
) -> PlacesLayer:
    """Greedy clearance-descending subsampling of the skeleton.

    A skeleton cell becomes a node unless an accepted node lies within
    ``spacing``; nodes closer than ``2 * spacing`` with a FREE straight-line
    segment between them are joined by an edge.
    """
    grid = bf.grid
    cells = np.argwhere(bf.gvd)
    if len(cells) == 0:
        return PlacesLayer()
    clear = bf.distance[cells[:, 0], cells[:, 1]]
    order = np.lexsort((cells[:, 1], cells[:, 0], -clear))
    bucket = spacing
    buckets: dict[tuple[int, int], list[int]] = {}
    nodes: list[PlaceNode] = []
    for k in order:
        iy, ix = int(cells[k, 0]), int(cells[k, 1])
        x, y = grid.cell_center(iy, ix)
        bx, by = int(math.floor(x / bucket)), int(math.floor(y / bucket))
        near = False
        for gx in (bx - 1, bx, bx + 1):
            for gy in (by - 1, by, by + 1):
                for j in buckets.get((gx, gy), ()):
                    if math.dist(nodes[j].position, (x, y)) <= spacing:
                        near = True
                        break
                if near:
                    break
            if near:
                break
        if near:
            continue
        buckets.setdefault((bx, by), []).append(len(nodes))
        nodes.append(PlaceNode(first_id + len(nodes), (x, y), terrain, float(clear[k])))

    edges = []
    pos = np.array([n.position for n in nodes])
    for a in range(len(nodes)):
        d = np.linalg.norm(pos[a + 1 :] - pos[a], axis=1)
        for off in np.flatnonzero(d <= 2 * spacing):
            b = a + 1 + int(off)
            if _segment_free(grid, nodes[a].position, nodes[b].position):
                edges.append((nodes[a].id, nodes[b].id, float(d[off])))
    return PlacesLayer(nodes, edges)


def connect_terrain_graphs(graphs: list[PlacesLayer], bridge_components: bool = True) -> PlacesLayer:
    """Union per-terrain graphs and link dangling nodes across terrains.

    Each node with at most one intra-terrain neighbour gets an edge to the
    nearest node of a different terrain (ties: smaller id). With
    ``bridge_components`` any components still separate afterwards are joined
    by their shortest node-to-node link, so the result is one component.
    A single-terrain input is returned unchanged.
    """
    nodes = [n for g in graphs for n in g.nodes]
    edges = [e for g in graphs for e in g.edges]
    layer = PlacesLayer(list(nodes), list(edges))
    terrains = {n.terrain for n in nodes}
    if len(terrains) < 2:
        return layer
    deg = layer.degree()
    pos = layer.positions()
    ids = np.array([n.id for n in nodes])
    terr = np.array([n.terrain for n in nodes])
    existing = {(min(a, b), max(a, b)) for a, b, _ in edges}
    for k, n in enumerate(nodes):
        if deg[n.id] > 1:
            continue
        other = np.flatnonzero(terr != n.terrain)
        d = np.linalg.norm(pos[other] - pos[k], axis=1)
        cand = other[d == d.min()]
        j = int(cand[np.argmin(ids[cand])])
        key = (min(n.id, int(ids[j])), max(n.id, int(ids[j])))
        if key not in existing:
            existing.add(key)
            layer.edges.append((key[0], key[1], float(d.min())))
    if bridge_components:
        _bridge(layer, existing)
    return layer


def _bridge(layer: PlacesLayer, existing: set) -> None:
    index = {n.id: k for k, n in enumerate(layer.nodes)}
    pos = layer.positions()
    comps = layer.components()
    while len(comps) > 1:
        # Join the first component to whichever other component is closest.
        base = np.array([index[i] for i in comps[0]])
        rest = np.array([index[i] for c in comps[1:] for i in c])
        d = np.linalg.norm(pos[base][:, None, :] - pos[rest][None, :, :], axis=2)
        flat = np.flatnonzero(d == d.min())
        pairs = sorted(
            (min(layer.nodes[base[f // len(rest)]].id, layer.nodes[rest[f % len(rest)]].id),
             max(layer.nodes[base[f // len(rest)]].id, layer.nodes[rest[f % len(rest)]].id))
            for f in flat
        )
        a, b = pairs[0]
        existing.add((a, b))
        layer.edges.append((a, b, float(d.min())))
        comps = layer.components()


def _camera_geometry(dataset: SceneDataset):
    cams, fwds, halves, embs = [], [], [], []
    for f in dataset.frames:
        if f.image_embedding_id is None:
            continue
        cams.append(f.pose.translation[:2])
        fwd = f.pose.matrix @ np.array([0.0, 0.0, 1.0])
        fwds.append(fwd[:2])
        halves.append(f.intrinsics.half_fov)
        embs.append(dataset.embeddings[f.image_embedding_id])
    return np.array(cams).reshape(-1, 2), np.array(fwds).reshape(-1, 2), np.array(halves), embs


def in_view(node_xy, cam_xy, fwd_xy, half_fov: float) -> bool:
    """Horizontal frustum test: node in front of the camera within half-FOV."""
    v = np.asarray(node_xy, dtype=np.float64) - np.asarray(cam_xy, dtype=np.float64)
    f = np.asarray(fwd_xy, dtype=np.float64)
    nv, nf = float(np.linalg.norm(v)), float(np.linalg.norm(f))
    if nv == 0 or nf == 0:
        return False
    c = float(np.dot(v, f)) / (nv * nf)
    return c > 0 and c >= math.cos(half_fov) - 1e-12


def assign_place_embeddings(layer: PlacesLayer, dataset: SceneDataset, radius: float = 20.0) -> PlacesLayer:
    """Attach the terrain class embedding and a view-averaged image embedding.

    The view embedding is the mean image embedding over frames within
    ``radius`` (planar) that have the node in view. Without such a frame, the
    nearest frame with the node in view is used, and failing that the
    nearest frame overall.
    """
    cams, fwds, halves, embs = _camera_geometry(dataset)
    if len(embs) == 0:
        raise ValueError("dataset has no frames with image embeddings")
    terrain_emb = dataset.terrain_class_embeddings
    fwd_norm = np.linalg.norm(fwds, axis=1)
    out = []
    for n in layer.nodes:
        v = np.asarray(n.position) - cams
        dist = np.linalg.norm(v, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cosang = np.einsum("ij,ij->i", v, fwds) / (dist * fwd_norm)
        seen = (dist > 0) & (fwd_norm > 0) & (cosang > 0) & (cosang >= np.cos(halves) - 1e-12)
        chosen = np.flatnonzero(seen & (dist <= radius))
        if len(chosen):
            view = np.mean([embs[k] for k in chosen], axis=0)
        else:
            pool = np.flatnonzero(seen)
            if len(pool) == 0:
                pool = np.arange(len(embs))
            k = int(pool[np.argmin(dist[pool])])
            view = np.array(embs[k], dtype=np.float64)
        out.append(replace(n, terrain_embedding=np.array(terrain_emb[n.terrain]), view_embedding=view))
    return PlacesLayer(out, list(layer.edges))


def build_places(smap: SemanticGlobalMap, dataset: SceneDataset, cfg: PlacesConfig | None = None) -> PlacesLayer:
    """All terrain grids -> skeletons -> nodes -> linked, embedded places layer."""
    cfg = cfg or PlacesConfig()
    graphs = []
    next_id = 0
    for t in sorted(dataset.terrain_classes, key=lambda t: t.id):
        grid = rasterize_terrain(smap, t.id, cfg.resolution)
        if grid.is_empty or not grid.free.any():
            continue
        g = extract_place_nodes(brushfire_gvd(grid), cfg.spacing, t.id, next_id)
        next_id += len(g.nodes)
        graphs.append(g)
    layer = connect_terrain_graphs(graphs, cfg.bridge_components)
    if not layer.nodes:
        return layer
    return assign_place_embeddings(layer, dataset, cfg.view_radius)
