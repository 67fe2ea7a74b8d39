"""Object retrieval, region monitoring and retrieval metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from terrain_sg.boxes import OrientedBox, box_iou, oriented_bbox
from terrain_sg.clustering import cluster_members, dbscan
from terrain_sg.core import cosine_similarities, cosine_similarity
from terrain_sg.dataset import GroundTruthObject
from terrain_sg.errors import ConfigError, FormatVersionError, MissingHierarchyError, SchemaError
from terrain_sg.fusion import ResolveMode, SemanticGlobalMap
from terrain_sg.places import PlacesLayer
from terrain_sg.scenegraph import SceneGraph

__all__ = [
    "OrientedBox",
    "oriented_bbox",
    "QueryConfig",
    "RetrievedBox",
    "RetrievalResult",
    "retrieve_objects_ms",
    "retrieve_objects_3dsg",
    "monitor_region",
    "eval_retrieval",
]

RESULTS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class QueryConfig:
    alpha: float = 0.25
    mode: ResolveMode = ResolveMode.AVG
    dbscan_eps: float = 1.0
    dbscan_min_pts: int = 5
    top_k_regions: int = 3
    region_alpha: float | None = None  # None: use alpha
    place_alpha: float | None = None
    region_level: int = 1
    region_method: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", ResolveMode(self.mode))
        for name in ("alpha", "region_alpha", "place_alpha"):
            v = getattr(self, name)
            if v is not None and not -1.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [-1, 1], got {v}")
        if not self.dbscan_eps > 0:
            raise ConfigError("dbscan_eps must be positive")
        if self.dbscan_min_pts < 1:
            raise ConfigError("dbscan_min_pts must be at least 1")
        if self.top_k_regions < 1:
            raise ConfigError("top_k_regions must be at least 1")
        if self.region_level < 1:
            raise ConfigError("region_level must be at least 1")

    @property
    def region_threshold(self) -> float:
        return self.alpha if self.region_alpha is None else self.region_alpha

    @property
    def place_threshold(self) -> float:
        return self.alpha if self.place_alpha is None else self.place_alpha


@dataclass
class RetrievedBox:
    box: OrientedBox
    score: float
    point_count: int
    place_id: int | None
    members: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        d = self.box.to_dict()
        d.update(score=float(self.score), point_count=int(self.point_count), place_id=self.place_id)
        return d


@dataclass
class RetrievalResult:
    boxes: list[RetrievedBox] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.boxes)

    def point_set(self) -> set[int]:
        return {int(i) for b in self.boxes for i in b.members}


# -- place attribution --------------------------------------------------------


def nearest_places(places: PlacesLayer, xy: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Nearest place id for each planar point (ties: smaller id)."""
    nodes = sorted(places.nodes, key=lambda n: n.id)
    ids = np.array([n.id for n in nodes], dtype=np.int64)
    pos = np.array([n.position for n in nodes], dtype=np.float64).reshape(-1, 2)
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    out = np.empty(len(xy), dtype=np.int64)
    for s in range(0, len(xy), chunk):
        block = xy[s : s + chunk]
        d2 = ((block[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2)
        out[s : s + chunk] = ids[np.argmin(d2, axis=1)]
    return out


# -- retrieval ----------------------------------------------------------------


def order_clusters(clusters: list[RetrievedBox]) -> list[RetrievedBox]:
    return sorted(clusters, key=lambda b: (-b.score, int(b.members.min())))


def retrieve_objects_ms(
    smap: SemanticGlobalMap,
    query,
    cfg: QueryConfig | None = None,
    places: PlacesLayer | None = None,
    candidates: np.ndarray | None = None,
) -> RetrievalResult:
    """Threshold resolved point embeddings, cluster the hits, box each cluster.

    ``candidates`` optionally restricts the search to a subset of map point
    indices. Boxes are ordered by descending score, then by lowest member index.
    """
    cfg = cfg or QueryConfig()
    if len(smap) == 0:
        return RetrievalResult()
    emb = smap.resolved_embeddings(cfg.mode)
    idx = np.arange(len(smap)) if candidates is None else np.unique(np.asarray(candidates, dtype=np.int64))
    if len(idx) == 0:
        return RetrievalResult()
    sims = cosine_similarities(emb[idx], query)
    hit = sims >= cfg.alpha
    idx, sims = idx[hit], sims[hit]
    if len(idx) == 0:
        return RetrievalResult()
    pos = smap.positions()[idx]
    labels = dbscan(pos, cfg.dbscan_eps, cfg.dbscan_min_pts)
    out = []
    for members in cluster_members(labels):
        box = oriented_bbox(pos[members])
        place = None
        if places is not None and places.nodes:
            place = int(nearest_places(places, box.center[:2])[0])
        out.append(RetrievedBox(box, float(sims[members].max()), len(members), place, idx[members]))
    return RetrievalResult(order_clusters(out))


def filtered_places(graph: SceneGraph, query, cfg: QueryConfig) -> list[int]:
    """Place ids surviving the region and place similarity filters."""
    h = graph.hierarchy(cfg.region_method)
    if cfg.region_level > h.depth:
        raise MissingHierarchyError(f"hierarchy has {h.depth} levels, asked for level {cfg.region_level}")
    regions = [r for r in h.level_regions(cfg.region_level) if cosine_similarity(r.embedding, query) >= cfg.region_threshold]
    index = {n.id: n for n in graph.places.nodes}
    keep = []
    for r in regions:
        for pid in r.members:
            if cosine_similarity(index[pid].view_embedding, query) >= cfg.place_threshold:
                keep.append(pid)
    return sorted(keep)


def retrieve_objects_3dsg(graph: SceneGraph, smap: SemanticGlobalMap, query, cfg: QueryConfig | None = None) -> RetrievalResult:
    """Retrieval restricted to map points attributed to relevant places."""
    cfg = cfg or QueryConfig()
    if not graph.places.nodes:
        raise MissingHierarchyError("graph has no places layer")
    keep = filtered_places(graph, query, cfg)
    if not keep or len(smap) == 0:
        return RetrievalResult()
    owner = nearest_places(graph.places, smap.positions()[:, :2])
    candidates = np.flatnonzero(np.isin(owner, keep))
    return retrieve_objects_ms(smap, query, cfg, graph.places, candidates)


def monitor_region(graph: SceneGraph, query, cfg: QueryConfig | None = None) -> list[int]:
    """Places under the top-k regions whose view embedding passes ``alpha``."""
    cfg = cfg or QueryConfig()
    h = graph.hierarchy(cfg.region_method)
    if cfg.region_level > h.depth:
        raise MissingHierarchyError(f"hierarchy has {h.depth} levels, asked for level {cfg.region_level}")
    regions = h.level_regions(cfg.region_level)
    ranked = sorted(regions, key=lambda r: (-cosine_similarity(r.embedding, query), r.id))
    index = {n.id: n for n in graph.places.nodes}
    out = []
    for r in ranked[: cfg.top_k_regions]:
        out.extend(pid for pid in r.members if cosine_similarity(index[pid].view_embedding, query) >= cfg.alpha)
    return sorted(out)


@dataclass(frozen=True)
class SetMetrics:
    precision: float
    recall: float
    f1: float


def set_metrics(predicted, truth) -> SetMetrics:
    p, t = set(predicted), set(truth)
    tp = len(p & t)
    prec = tp / len(p) if p else 0.0
    rec = tp / len(t) if t else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return SetMetrics(prec, rec, f1)


# -- evaluation ---------------------------------------------------------------


@dataclass(frozen=True)
class RetrievalMetrics:
    iou: float
    strict_accuracy: float
    relaxed_accuracy: float
    strict_precision: float
    relaxed_precision: float
    f1: float
    n_objects: int
    n_predictions: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _boxes_of(result) -> list[tuple[OrientedBox, float]]:
    items = result.boxes if isinstance(result, RetrievalResult) else result
    out = []
    for it in items:
        if isinstance(it, RetrievedBox):
            out.append((it.box, it.score))
        else:
            out.append((it[0], float(it[1])))
    return out


def eval_retrieval(gt: list[GroundTruthObject], results: dict, iou_threshold: float = 0.1) -> RetrievalMetrics:
    """Score predictions against ground truth boxes.

    ``results`` maps each query embedding id to a RetrievalResult or a list
    of ``(box, score)`` pairs. The top-1 prediction of a query is its highest
    scored box (ties: earliest listed).
    """
    gt_queries = {g.query_embedding_id for g in gt}
    if gt_queries != set(results):
        missing = sorted(gt_queries - set(results))
        extra = sorted(set(results) - gt_queries)
        raise ValueError(f"query sets differ (missing {missing}, unexpected {extra})")
    by_query: dict[str, list[GroundTruthObject]] = {}
    for g in gt:
        by_query.setdefault(g.query_embedding_id, []).append(g)

    ious, strict, relaxed = [], 0, 0
    n_pred = strict_hits = relaxed_hits = 0
    for q, objs in by_query.items():
        preds = _boxes_of(results[q])
        n_pred += len(preds)
        top = max(range(len(preds)), key=lambda k: (preds[k][1], -k)) if preds else None
        table = np.array([[box_iou(p, g.obb) for g in objs] for p, _ in preds]).reshape(len(preds), len(objs))
        for j in range(len(objs)):
            col = table[:, j]
            ious.append(float(col.max()) if len(col) else 0.0)
            if top is not None and col[top] >= iou_threshold:
                strict += 1
            if len(col) and col.max() >= iou_threshold:
                relaxed += 1
        for k in range(len(preds)):
            matched = bool(len(objs)) and table[k].max() >= iou_threshold
            relaxed_hits += matched
            strict_hits += matched and k == top
    n = len(gt)
    racc = relaxed / n if n else 0.0
    rprec = float(relaxed_hits) / n_pred if n_pred else 0.0
    f1 = 2 * racc * rprec / (racc + rprec) if racc + rprec > 0 else 0.0
    return RetrievalMetrics(
        float(np.mean(ious)) if ious else 0.0,
        strict / n if n else 0.0,
        racc,
        float(strict_hits) / n_pred if n_pred else 0.0,
        rprec,
        float(f1),
        n,
        n_pred,
    )


# -- results files ------------------------------------------------------------


def results_to_dict(results: dict[str, RetrievalResult], meta: dict | None = None) -> dict:
    return {
        "kind": "retrieval_results",
        "format_version": RESULTS_FORMAT_VERSION,
        "meta": meta or {},
        "queries": {q: [b.to_dict() for b in r.boxes] for q, r in sorted(results.items())},
    }


def save_results(results: dict[str, RetrievalResult], path, meta: dict | None = None) -> None:
    text = json.dumps(results_to_dict(results, meta), sort_keys=True, separators=(",", ":"), allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_results(path) -> dict[str, list[tuple[OrientedBox, float]]]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON ({exc.msg})", str(path)) from exc
    if data.get("kind") != "retrieval_results":
        raise SchemaError("not a retrieval results file", str(path))
    if data.get("format_version") != RESULTS_FORMAT_VERSION:
        raise FormatVersionError(f"unsupported format_version {data.get('format_version')!r}", str(path))
    return {q: [(OrientedBox.from_dict(b), float(b["score"])) for b in boxes] for q, boxes in data["queries"].items()}
