"""Versioned JSON persistence for maps and scene graphs.

Writes are deterministic: keys are sorted, floats use ``repr`` round-trip
formatting, and containers are emitted in their stored order, so saving the
same object twice yields identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from terrain_sg.errors import FormatVersionError, SchemaError
from terrain_sg.boxes import OrientedBox
from terrain_sg.fusion import SemanticGlobalMap
from terrain_sg.places import PlaceNode, PlacesLayer
from terrain_sg.regions import RegionHierarchy, RegionNode
from terrain_sg.scenegraph import ObjectNode, SceneGraph

MAP_FORMAT_VERSION = 1
GRAPH_FORMAT_VERSION = 1


def _dump(obj, path) -> None:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _load(path, kind: str, version: int) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON ({exc.msg})", str(path)) from exc
    if not isinstance(data, dict) or data.get("kind") != kind:
        got = data.get("kind") if isinstance(data, dict) else type(data).__name__
        raise SchemaError(f"expected a {kind} file, got {got!r}", str(path))
    if data.get("format_version") != version:
        raise FormatVersionError(
            f"unsupported format_version {data.get('format_version')!r} (expected {version})", str(path)
        )
    return data


def map_to_dict(smap: SemanticGlobalMap) -> dict:
    return {
        "kind": "semantic_map",
        "format_version": MAP_FORMAT_VERSION,
        "voxel_leaf": smap.voxel_leaf,
        "embedding_dim": smap.embedding_dim,
        "terrain_names": {str(k): v for k, v in sorted(smap.terrain_names.items())},
        "vectors": [[float(x) for x in v] for v in smap._vectors],
        "points": [
            {"p": list(pos), "s": [list(s) for s in slots], "t": terr}
            for pos, slots, terr in zip(smap._positions, smap._slots, smap._terrain)
        ],
    }


def map_from_dict(data: dict) -> SemanticGlobalMap:
    smap = SemanticGlobalMap(float(data["voxel_leaf"]), data.get("embedding_dim"))
    smap.terrain_names = {int(k): v for k, v in data.get("terrain_names", {}).items()}
    for v in data["vectors"]:
        vec = np.asarray(v, dtype=np.float64)
        idx = smap.register(vec)
        if idx != len(smap._vectors) - 1:
            raise SchemaError("duplicate vector in map table", "vectors")
    n_vec = len(smap._vectors)
    for k, pt in enumerate(data["points"]):
        for idx, count in pt["s"]:
            if not (0 <= idx < n_vec) or count < 1:
                raise SchemaError("slot references a missing vector or has a zero count", f"points[{k}]")
        smap._add_raw_point(pt["p"], pt["s"], pt["t"])
    return smap


def save_map(smap: SemanticGlobalMap, path) -> None:
    _dump(map_to_dict(smap), path)


def _parse(fn, data: dict, path):
    try:
        return fn(data)
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise SchemaError(f"malformed content ({exc})", str(path)) from exc


def load_map(path) -> SemanticGlobalMap:
    return _parse(map_from_dict, _load(path, "semantic_map", MAP_FORMAT_VERSION), path)


def maps_equal(a: SemanticGlobalMap, b: SemanticGlobalMap) -> bool:
    """Field-for-field equality; slot sets compared as multisets of (vector, count)."""
    if a.voxel_leaf != b.voxel_leaf or len(a) != len(b) or a.embedding_dim != b.embedding_dim:
        return False
    for i in range(len(a)):
        if a._positions[i] != b._positions[i] or a._terrain[i] != b._terrain[i]:
            return False
        sa = sorted((a._vectors[idx].tobytes(), c) for idx, c in a._slots[i])
        sb = sorted((b._vectors[idx].tobytes(), c) for idx, c in b._slots[i])
        if sa != sb:
            return False
    return True


def _vec(v) -> list[float] | None:
    return None if v is None else [float(x) for x in v]


def _arr(v) -> np.ndarray | None:
    return None if v is None else np.asarray(v, dtype=np.float64)


def graph_to_dict(graph: SceneGraph) -> dict:
    places = graph.places
    hierarchies = {}
    for method, h in sorted(graph.hierarchies.items()):
        hierarchies[method] = {
            "levels": h.levels,
            "regions": [
                {
                    "id": r.id,
                    "level": r.level,
                    "children": list(r.children),
                    "members": list(r.members),
                    "parent": h.parent.get(r.id),
                    "embedding": _vec(r.embedding),
                    "centroid": None if r.centroid is None else list(r.centroid),
                }
                for r in sorted(h.regions.values(), key=lambda r: r.id)
            ],
        }
    return {
        "kind": "scene_graph",
        "format_version": GRAPH_FORMAT_VERSION,
        "embedding_dim": graph.embedding_dim,
        "terrain_names": {str(k): v for k, v in sorted(graph.terrain_names.items())},
        "places": {
            "nodes": [
                {
                    "id": n.id,
                    "position": [float(c) for c in n.position],
                    "terrain": n.terrain,
                    "clearance": float(n.clearance),
                    "terrain_embedding": _vec(n.terrain_embedding),
                    "view_embedding": _vec(n.view_embedding),
                }
                for n in places.nodes
            ],
            "edges": [[int(a), int(b), float(length)] for a, b, length in places.edges],
        },
        "hierarchies": hierarchies,
        "objects": [
            {
                "id": o.id,
                "label": o.label,
                "box": o.box.to_dict(),
                "score": float(o.score),
                "place_id": o.place_id,
                "embedding": _vec(o.embedding),
            }
            for o in graph.objects
        ],
    }


def graph_from_dict(data: dict) -> SceneGraph:
    try:
        nodes = [
            PlaceNode(
                int(n["id"]),
                (float(n["position"][0]), float(n["position"][1])),
                int(n["terrain"]),
                float(n["clearance"]),
                _arr(n.get("terrain_embedding")),
                _arr(n.get("view_embedding")),
            )
            for n in data["places"]["nodes"]
        ]
        ids = {n.id for n in nodes}
        edges = []
        for k, (a, b, length) in enumerate(data["places"]["edges"]):
            if a not in ids or b not in ids or a == b:
                raise SchemaError("edge references a missing node or is a self-loop", f"places.edges[{k}]")
            edges.append((int(a), int(b), float(length)))
        hierarchies = {}
        for method, hd in data.get("hierarchies", {}).items():
            h = RegionHierarchy(method, [[list(map(int, c)) for c in part] for part in hd["levels"]])
            for r in hd["regions"]:
                node = RegionNode(
                    int(r["id"]),
                    int(r["level"]),
                    [int(c) for c in r["children"]],
                    [int(m) for m in r["members"]],
                    _arr(r.get("embedding")),
                    None if r.get("centroid") is None else (float(r["centroid"][0]), float(r["centroid"][1])),
                )
                h.regions[node.id] = node
                if r.get("parent") is not None:
                    h.parent[node.id] = int(r["parent"])
            hierarchies[method] = h
        objects = [
            ObjectNode(
                int(o["id"]),
                str(o["label"]),
                OrientedBox.from_dict(o["box"]),
                float(o["score"]),
                None if o.get("place_id") is None else int(o["place_id"]),
                _arr(o.get("embedding")),
            )
            for o in data.get("objects", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"malformed scene graph ({exc})", "graph") from exc
    return SceneGraph(
        PlacesLayer(nodes, edges),
        hierarchies,
        objects,
        data.get("embedding_dim"),
        {int(k): v for k, v in data.get("terrain_names", {}).items()},
    )


def save_graph(graph: SceneGraph, path) -> None:
    _dump(graph_to_dict(graph), path)


def load_graph(path) -> SceneGraph:
    return _parse(graph_from_dict, _load(path, "scene_graph", GRAPH_FORMAT_VERSION), path)


def graphs_equal(a: SceneGraph, b: SceneGraph) -> bool:
    """Structural equality: same nodes, adjacency, hierarchy parent/child maps, objects."""
    return graph_to_dict(a) == graph_to_dict(b)
