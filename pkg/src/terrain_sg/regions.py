"""Hierarchical region layers over the place nodes.

Two constructions share one pairwise place distance (planar distance plus a
scaled cosine dissimilarity of view embeddings): agglomerative clustering cut
at a fixed ladder of thresholds, and recursive two-way spectral splitting.
A batch agglomerative information bottleneck clusterer is included as a
task-driven baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from terrain_sg.core import cosine_similarity
from terrain_sg.errors import ConfigError, EmbeddingError
from terrain_sg.places import PlaceNode, PlacesLayer


@dataclass(frozen=True)
class RegionConfig:
    lambda_semantic: float = 50.0
    agglo_thresholds: tuple[float, ...] = (50.0, 100.0, 200.0, 400.0)
    spectral_sem_diff_max: float = 0.1
    spectral_area_max: float = 2500.0
    linkage: str = "average"

    def __post_init__(self):
        t = tuple(float(x) for x in self.agglo_thresholds)
        object.__setattr__(self, "agglo_thresholds", t)
        if not t or t[0] <= 0 or any(b <= a for a, b in zip(t, t[1:])):
            raise ConfigError("agglo_thresholds must be positive and strictly increasing")
        if not self.lambda_semantic >= 0:
            raise ConfigError("lambda_semantic must be nonnegative")
        if self.spectral_sem_diff_max < 0 or self.spectral_area_max < 0:
            raise ConfigError("spectral stopping thresholds must be nonnegative")


@dataclass
class RegionNode:
    id: int
    level: int
    children: list[int]
    members: list[int]
    embedding: np.ndarray | None = None
    centroid: tuple[float, float] | None = None


@dataclass
class RegionHierarchy:
    """``levels[k - 1]`` is the level-``k`` partition of place ids (level 1 finest)."""

    method: str
    levels: list[list[list[int]]]
    regions: dict[int, RegionNode] = field(default_factory=dict)
    parent: dict[int, int] = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return len(self.levels)

    def level_regions(self, level: int) -> list[RegionNode]:
        return [r for r in self.regions.values() if r.level == level]

    def finest(self) -> list[RegionNode]:
        return self.level_regions(1)


# -- distances --------------------------------------------------------------


def _view(n: PlaceNode) -> np.ndarray:
    if n.view_embedding is None:
        raise EmbeddingError(f"place {n.id} has no view embedding")
    return n.view_embedding


def place_pair_distance(a: PlaceNode, b: PlaceNode, cfg: RegionConfig | None = None) -> float:
    cfg = cfg or RegionConfig()
    geo = math.dist(a.position, b.position)
    if a is b:
        return 0.0
    return geo + cfg.lambda_semantic * (1.0 - cosine_similarity(_view(a), _view(b)))


def distance_matrix(nodes: list[PlaceNode], cfg: RegionConfig) -> np.ndarray:
    pos = np.array([n.position for n in nodes], dtype=np.float64).reshape(-1, 2)
    emb = np.array([_view(n) for n in nodes], dtype=np.float64)
    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    geo = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    d = geo + cfg.lambda_semantic * (1.0 - cos)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


# -- hierarchy assembly -------------------------------------------------------


def _canonical(partition) -> list[list[int]]:
    return sorted((sorted(int(i) for i in c) for c in partition), key=lambda c: c[0])


def hierarchy_from_levels(method: str, levels: list[list[list[int]]], places: PlacesLayer) -> RegionHierarchy:
    """Create region nodes for nested partitions and fill their embeddings."""
    levels = [_canonical(p) for p in levels]
    h = RegionHierarchy(method, levels)
    next_id = 0
    prev: list[tuple[int, set[int]]] = []
    for k, partition in enumerate(levels, start=1):
        cur = []
        for members in partition:
            mset = set(members)
            if k == 1:
                children = list(members)
            else:
                children = [rid for rid, pm in prev if pm <= mset]
                if set().union(*(pm for rid, pm in prev if rid in children)) != mset:
                    raise ValueError(f"level {k} is not nested in level {k - 1}")
            node = RegionNode(next_id, k, children, list(members))
            h.regions[next_id] = node
            for c in children if k > 1 else ():
                h.parent[c] = next_id
            cur.append((next_id, mset))
            next_id += 1
        prev = cur
    return build_region_embeddings(h, places)


def build_region_embeddings(h: RegionHierarchy, places: PlacesLayer) -> RegionHierarchy:
    """Bottom-up unweighted child means; centroid is the mean member position."""
    index = {n.id: n for n in places.nodes}
    for level in range(1, h.depth + 1):
        for r in h.level_regions(level):
            if level == 1:
                vecs = [_view(index[c]) for c in r.children]
            else:
                vecs = [h.regions[c].embedding for c in r.children]
            r.embedding = np.mean(np.array(vecs, dtype=np.float64), axis=0)
            pos = np.array([index[m].position for m in r.members], dtype=np.float64)
            c = pos.mean(axis=0)
            r.centroid = (float(c[0]), float(c[1]))
    return h


# -- agglomerative ------------------------------------------------------------


def agglomerative_regions(places: PlacesLayer, cfg: RegionConfig | None = None) -> RegionHierarchy:
    """Average-linkage dendrogram over all place pairs, cut at each threshold."""
    cfg = cfg or RegionConfig()
    nodes = places.nodes
    if not nodes:
        raise ValueError("need at least one place node")
    ids = [n.id for n in nodes]
    if len(nodes) == 1:
        levels = [[[ids[0]]] for _ in cfg.agglo_thresholds]
        return hierarchy_from_levels("agglomerative", levels, places)
    d = distance_matrix(nodes, cfg)
    z = linkage(squareform(d, checks=False), method=cfg.linkage)
    levels = []
    for t in cfg.agglo_thresholds:
        labels = fcluster(z, t, criterion="distance")
        groups: dict[int, list[int]] = {}
        for nid, lab in zip(ids, labels):
            groups.setdefault(int(lab), []).append(nid)
        levels.append(list(groups.values()))
    return hierarchy_from_levels("agglomerative", levels, places)


# -- spectral -----------------------------------------------------------------


def semantic_difference(embeddings: np.ndarray) -> float:
    """Spread of member similarity to the cluster mean (max minus min cosine)."""
    emb = np.asarray(embeddings, dtype=np.float64)
    mean = emb.mean(axis=0)
    if not np.any(mean):
        return 2.0
    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    sims = unit @ (mean / np.linalg.norm(mean))
    return float(sims.max() - sims.min())


def bbox_area(positions: np.ndarray) -> float:
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    span = pos.max(axis=0) - pos.min(axis=0)
    return float(span[0] * span[1])


def fiedler_vector(affinity: np.ndarray) -> np.ndarray:
    """Second eigenvector of the symmetric normalized Laplacian."""
    a = np.asarray(affinity, dtype=np.float64)
    deg = a.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    lap = np.eye(len(a)) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    _, vecs = np.linalg.eigh(0.5 * (lap + lap.T))
    f = vecs[:, 1]
    if f[0] < 0:
        f = -f
    return f


@dataclass
class _SplitNode:
    members: list[int]
    children: list["_SplitNode"] = field(default_factory=list)
    stop_reason: str = ""


def _stop_reason(members_idx, emb, pos, cfg: RegionConfig) -> str:
    if len(members_idx) <= 2:
        return "size"
    if semantic_difference(emb[members_idx]) <= cfg.spectral_sem_diff_max:
        return "semantic"
    if bbox_area(pos[members_idx]) <= cfg.spectral_area_max:
        return "area"
    return ""


def spectral_tree(places: PlacesLayer, cfg: RegionConfig | None = None) -> _SplitNode:
    cfg = cfg or RegionConfig()
    nodes = sorted(places.nodes, key=lambda n: n.id)
    if not nodes:
        raise ValueError("need at least one place node")
    d = distance_matrix(nodes, cfg)
    scale = cfg.lambda_semantic if cfg.lambda_semantic > 0 else 1.0
    affinity = np.exp(-d / scale)
    np.fill_diagonal(affinity, 0.0)
    emb = np.array([_view(n) for n in nodes])
    pos = np.array([n.position for n in nodes])
    ids = [n.id for n in nodes]

    root = _SplitNode(list(range(len(nodes))))
    stack = [root]
    while stack:
        node = stack.pop()
        idx = np.array(node.members)
        reason = _stop_reason(idx, emb, pos, cfg)
        if reason:
            node.stop_reason = reason
            continue
        f = fiedler_vector(affinity[np.ix_(idx, idx)])
        left = [int(i) for i, v in zip(idx, f) if v >= 0]
        right = [int(i) for i, v in zip(idx, f) if v < 0]
        if not left or not right:
            node.stop_reason = "degenerate"
            continue
        node.children = [_SplitNode(left), _SplitNode(right)]
        stack.extend(node.children)

    def relabel(n: _SplitNode):
        n.members = [ids[i] for i in n.members]
        for c in n.children:
            relabel(c)

    relabel(root)
    return root


def spectral_regions(places: PlacesLayer, cfg: RegionConfig | None = None) -> RegionHierarchy:
    """Recursive Fiedler bisection; the split tree's depths become levels.

    A cluster stops splitting when its semantic difference or its bounding-box
    area is under threshold, when it has at most two members, or when a split
    would leave one side empty. Leaves that stop early are carried unchanged
    into every finer level.
    """
    root = spectral_tree(places, cfg)
    by_depth: list[list[_SplitNode]] = []

    def walk(n: _SplitNode, depth: int):
        while len(by_depth) <= depth:
            by_depth.append([])
        by_depth[depth].append(n)
        for c in n.children:
            walk(c, depth + 1)

    walk(root, 0)
    max_depth = len(by_depth) - 1
    levels = []
    for depth in range(max_depth, -1, -1):
        part = [n.members for n in by_depth[depth]]
        for shallower in range(depth):
            part += [n.members for n in by_depth[shallower] if not n.children]
        levels.append(part)
    h = hierarchy_from_levels("spectral", levels, places)
    h.tree = root  # kept for stopping-rule audits
    return h


# -- information bottleneck baseline -----------------------------------------


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log(p / q), 0.0)
    return t.sum(axis=-1)


def merge_cost(pi: np.ndarray, pj, cond_i: np.ndarray, cond_j) -> np.ndarray:
    """Information lost by merging clusters: mass times weighted Jensen-Shannon."""
    tot = pi + pj
    wi, wj = pi / tot, pj / tot
    m = wi[..., None] * cond_i + wj[..., None] * cond_j
    return tot * (wi * _kl_rows(cond_i, m) + wj * _kl_rows(np.broadcast_to(cond_j, m.shape), m))


def task_conditionals(places: PlacesLayer, task_embeddings, temperature: float = 0.1) -> np.ndarray:
    """p(task | place) as a softmax over cosine similarities."""
    emb = np.array([_view(n) for n in places.nodes], dtype=np.float64)
    tasks = np.array(task_embeddings, dtype=np.float64).reshape(len(task_embeddings), -1)
    unit_e = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    unit_t = tasks / np.linalg.norm(tasks, axis=1, keepdims=True)
    logits = (unit_e @ unit_t.T) / temperature
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def aib_regions_baseline(
    places: PlacesLayer,
    task_embeddings,
    n_clusters: int,
    temperature: float = 0.1,
) -> list[list[int]]:
    """Greedy agglomerative information bottleneck down to ``n_clusters``."""
    if len(task_embeddings) < 1:
        raise ValueError("need at least one task embedding")
    n = len(places.nodes)
    if n_clusters > n or n_clusters < 1:
        raise ValueError(f"n_clusters={n_clusters} invalid for {n} place nodes")
    ids = [nd.id for nd in places.nodes]
    cond = task_conditionals(places, task_embeddings, temperature)
    mass = np.full(n, 1.0 / n)
    members: list[list[int] | None] = [[i] for i in ids]
    alive = np.ones(n, dtype=bool)
    cost = np.full((n, n), np.inf)
    for i in range(n):
        cost[i, i + 1 :] = merge_cost(np.full(n - i - 1, mass[i]), mass[i + 1 :], np.broadcast_to(cond[i], (n - i - 1, cond.shape[1])), cond[i + 1 :])
    clusters = n
    while clusters > n_clusters:
        flat = int(np.argmin(cost))
        i, j = divmod(flat, n)
        # i < j always; fold j into i
        cond[i] = (mass[i] * cond[i] + mass[j] * cond[j]) / (mass[i] + mass[j])
        mass[i] += mass[j]
        members[i] = members[i] + members[j]
        members[j] = None
        alive[j] = False
        cost[j, :] = np.inf
        cost[:, j] = np.inf
        others = np.flatnonzero(alive)
        others = others[others != i]
        if len(others):
            c = merge_cost(np.full(len(others), mass[i]), mass[others], np.broadcast_to(cond[i], (len(others), cond.shape[1])), cond[others])
            for o, v in zip(others, c):
                if o < i:
                    cost[o, i] = v
                else:
                    cost[i, o] = v
        clusters -= 1
    return _canonical([m for m in members if m is not None])


def aib_hierarchy(places: PlacesLayer, task_embeddings, n_clusters: int, temperature: float = 0.1) -> RegionHierarchy:
    """Single-level hierarchy wrapper so the baseline shares the monitoring harness."""
    part = aib_regions_baseline(places, task_embeddings, n_clusters, temperature)
    return hierarchy_from_levels("aib", [part], places)
