"""Command-line entry point: ``terrain-sg <subcommand> ...``.

Exit codes:
    0  success
    1  unexpected internal error
    2  usage or configuration error
    3  invalid input data (dataset, map, graph or results file)
    4  no path because prohibited terrain blocks every route
    5  no path because start and goal are disconnected
    6  no goal object matched the task query
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np

from terrain_sg.config import RunConfig, load_config
from terrain_sg.dataset import load_scene
from terrain_sg.errors import (
    ConfigError,
    DatasetError,
    DisconnectedUnreachableError,
    EmbeddingError,
    GridError,
    MissingHierarchyError,
    NoGoalError,
    ProhibitedUnreachableError,
    TerrainSGError,
)
from terrain_sg.fusion import build_map
from terrain_sg.persist import load_graph, load_map, save_graph, save_map
from terrain_sg.places import build_places
from terrain_sg.planner import plan_path, select_goal_node
from terrain_sg.query import (
    eval_retrieval,
    load_results,
    monitor_region,
    retrieve_objects_3dsg,
    retrieve_objects_ms,
    save_results,
)
from terrain_sg.regions import agglomerative_regions, spectral_regions
from terrain_sg.scenegraph import SceneGraph

log = logging.getLogger("terrain_sg")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_PROHIBITED = 4
EXIT_DISCONNECTED = 5
EXIT_NO_GOAL = 6

TABLE_COLUMNS = ["Method", "IoU", "SAcc", "RAcc", "SPrec", "RPrec", "F1"]
TERRAIN_COLORS = ["#7f7f7f", "#2ca02c", "#1f1f1f", "#8c564b", "#9467bd", "#17becf"]


class CliError(Exception):
    def __init__(self, message: str, code: int, kind: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n", encoding="utf-8")


# -- query embeddings ---------------------------------------------------------


def fetch_embedding(url: str, text: str, timeout: float = 30.0) -> np.ndarray:
    """POST ``{"text": ...}`` to an embedding service; expects ``{"embedding": [...]}``."""
    req = urllib.request.Request(
        url, data=json.dumps({"text": text}).encode(), headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            body = json.loads(resp.read().decode())
    except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
        raise CliError(f"embedding server request failed: {exc}", EXIT_DATA, "embed_server") from exc
    if not isinstance(body, dict) or "embedding" not in body:
        raise CliError("embedding server response lacks 'embedding'", EXIT_DATA, "embed_server")
    return np.asarray(body["embedding"], dtype=np.float64)


def resolve_query(spec: str, scene, args) -> tuple[str, np.ndarray]:
    """Turn an id, a vector file, or (with ``--embed-server``) raw text into ``(name, vector)``."""
    if getattr(args, "embed_server", None):
        return spec, fetch_embedding(args.embed_server, spec)
    path = Path(spec)
    if path.is_file():
        data = json.loads(path.read_text(encoding="utf-8"))
        values = data.get("embedding", data.get("values")) if isinstance(data, dict) else data
        if values is None:
            raise CliError(f"{spec}: no embedding vector found", EXIT_DATA, "query_file")
        return path.stem, np.asarray(values, dtype=np.float64)
    if scene is None:
        raise CliError(f"{spec!r} is not a file; pass --scene to look up embedding ids", EXIT_USAGE, "usage")
    if spec not in scene.embeddings:
        raise CliError(f"unknown embedding id {spec!r}", EXIT_DATA, "dangling_reference")
    return spec, scene.embeddings[spec]


# -- subcommands --------------------------------------------------------------


def cmd_gen_scene(args, cfg: RunConfig) -> int:
    from terrain_sg.scenegen import PRESETS, SceneSpec, generate_scene

    data = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    if "preset" in data:
        name = data.pop("preset")
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        try:
            spec = PRESETS[name](**data)
        except TypeError as exc:
            raise ConfigError(f"bad preset arguments: {exc}") from exc
    else:
        spec = SceneSpec.from_dict(data)
    out = generate_scene(spec, args.out)
    log.info("wrote %d frames (%d points) to %s", out.n_frames, out.n_points, out.root)
    return EXIT_OK


def cmd_build_map(args, cfg: RunConfig) -> int:
    scene = load_scene(args.scene)
    smap = build_map(scene, cfg.fusion, repeat=args.repeat)
    save_map(smap, args.out)
    log.info("map: %d points, %d slots, %d assignments", len(smap), smap.total_slots(), smap.total_assignments())
    return EXIT_OK


def build_graph(smap, scene, cfg: RunConfig, regions: str) -> SceneGraph:
    if len(smap) == 0:
        raise ConfigError("map holds no embedded points; build it from a scene with masks first")
    if not np.any(smap.terrain_labels() >= 0):
        raise ConfigError("map holds no terrain-labelled points, so no places can be built")
    places = build_places(smap, scene, cfg.places)
    if not places.nodes:
        raise ConfigError("no place nodes could be extracted from the terrain grids")
    graph = SceneGraph(places, {}, [], smap.embedding_dim, dict(smap.terrain_names))
    if regions in ("agglo", "both"):
        graph.hierarchies["agglomerative"] = agglomerative_regions(places, cfg.regions)
    if regions in ("spectral", "both"):
        graph.hierarchies["spectral"] = spectral_regions(places, cfg.regions)
    return graph


def cmd_build_graph(args, cfg: RunConfig) -> int:
    smap = load_map(args.map)
    scene = load_scene(args.scene)
    graph = build_graph(smap, scene, cfg, args.regions)
    save_graph(graph, args.out)
    log.info("graph: %d places, %d edges", len(graph.places.nodes), len(graph.places.edges))
    return EXIT_OK


def _query_cfg(args, cfg: RunConfig):
    return cfg.with_query(
        alpha=getattr(args, "alpha", None),
        mode=getattr(args, "mode", None),
        top_k_regions=getattr(args, "top_k", None),
        region_level=getattr(args, "region_level", None),
        region_method=getattr(args, "region_method", None),
    ).query


def cmd_query_object(args, cfg: RunConfig) -> int:
    qcfg = _query_cfg(args, cfg)
    graph = load_graph(args.graph)
    smap = load_map(args.map)
    scene = load_scene(args.scene) if args.scene else None
    specs = list(args.query_embedding or [])
    if args.all_ground_truth:
        if scene is None:
            raise CliError("--all-ground-truth needs --scene", EXIT_USAGE, "usage")
        specs += [g.query_embedding_id for g in scene.ground_truth if g.query_embedding_id not in specs]
    if not specs:
        raise CliError("give --query-embedding or --all-ground-truth", EXIT_USAGE, "usage")
    results = {}
    for spec in specs:
        name, q = resolve_query(spec, scene, args)
        if args.strategy == "ms":
            results[name] = retrieve_objects_ms(smap, q, qcfg, graph.places)
        else:
            results[name] = retrieve_objects_3dsg(graph, smap, q, qcfg)
    meta = {"strategy": args.strategy, "alpha": qcfg.alpha, "mode": qcfg.mode.value}
    save_results(results, args.out, meta)
    return EXIT_OK


def cmd_monitor_region(args, cfg: RunConfig) -> int:
    qcfg = _query_cfg(args, cfg)
    graph = load_graph(args.graph)
    scene = load_scene(args.scene) if args.scene else None
    out = {}
    for spec in args.query_embedding:
        name, q = resolve_query(spec, scene, args)
        out[name] = monitor_region(graph, q, qcfg)
    _write_json(args.out, {"kind": "monitored_places", "format_version": 1, "queries": out})
    return EXIT_OK


def overlay_svg(graph: SceneGraph, path_nodes: list[int] | None = None, size: float = 800.0) -> str:
    """Places layer coloured by terrain with an optional path stroke on top."""
    nodes = graph.places.nodes
    pos = graph.places.positions()
    if len(pos) == 0:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" height="{size:.0f}"/>\n'
    lo, hi = pos.min(axis=0) - 2.0, pos.max(axis=0) + 2.0
    scale = size / float(max(hi - lo))
    w, h = (hi - lo) * scale

    def xy(p):
        return (p[0] - lo[0]) * scale, h - (p[1] - lo[1]) * scale

    at = {n.id: n.position for n in nodes}
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1f}" height="{h:.1f}" viewBox="0 0 {w:.1f} {h:.1f}">']
    out.append('<rect width="100%" height="100%" fill="white"/>')
    for a, b, _ in graph.places.edges:
        (x1, y1), (x2, y2) = xy(at[a]), xy(at[b])
        out.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="#bbbbbb" stroke-width="1"/>')
    for n in nodes:
        x, y = xy(n.position)
        color = TERRAIN_COLORS[n.terrain % len(TERRAIN_COLORS)]
        name = graph.terrain_names.get(n.terrain, str(n.terrain))
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{color}"><title>{n.id} {name}</title></circle>')
    if path_nodes and len(path_nodes) > 1:
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(at[i]) for i in path_nodes))
        out.append(f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-width="3"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plan_path(args, cfg: RunConfig) -> int:
    graph = load_graph(args.graph)
    policy_data = cfg.policy
    if args.terrain_policy:
        policy_data = json.loads(Path(args.terrain_policy).read_text(encoding="utf-8"))
    from terrain_sg.planner import TerrainPolicy

    policy = TerrainPolicy.from_dict(policy_data, graph.terrain_names)
    if args.goal is not None:
        goal = args.goal
    else:
        if not args.map:
            raise CliError("--task-embedding needs --map", EXIT_USAGE, "usage")
        scene = load_scene(args.scene) if args.scene else None
        _, q = resolve_query(args.task_embedding, scene, args)
        goal = select_goal_node(graph, load_map(args.map), q, _query_cfg(args, cfg))
    result = plan_path(graph.places, args.start, goal, policy)
    _write_json(args.out, {"kind": "path", "format_version": 1, "start": args.start, "goal": goal, **result.to_dict()})
    if args.svg:
        Path(args.svg).write_text(overlay_svg(graph, result.nodes), encoding="utf-8")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    scene = load_scene(args.scene)
    preds = load_results(args.results)
    metrics = eval_retrieval(scene.ground_truth, preds, args.iou_threshold)
    _write_json(args.out, {"kind": "metrics", "format_version": 1, "iou_threshold": args.iou_threshold, **metrics.to_dict()})
    if args.table:
        with open(args.table, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TABLE_COLUMNS)
            m = metrics
            w.writerow(
                [args.method]
                + [f"{v:.4f}" for v in (m.iou, m.strict_accuracy, m.relaxed_accuracy, m.strict_precision, m.relaxed_precision, m.f1)]
            )
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="terrain-sg", description="Terrain-aware semantic mapping and scene graphs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML run configuration")
        return sp

    sp = common(sub.add_parser("gen-scene", help="generate a synthetic dataset"))
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_scene)

    sp = common(sub.add_parser("build-map", help="fuse frames into a semantic map"))
    sp.add_argument("--scene", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--repeat", type=int, default=1, help="replay each frame this many times")
    sp.set_defaults(func=cmd_build_map)

    sp = common(sub.add_parser("build-graph", help="places and region layers from a map"))
    sp.add_argument("--map", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--regions", choices=["agglo", "spectral", "both"], default="both")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_build_graph)

    def query_flags(sp, with_map: bool):
        sp.add_argument("--graph", required=True)
        if with_map:
            sp.add_argument("--map", required=True)
        sp.add_argument("--scene", help="scene directory for embedding id lookup")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--region-level", type=int)
        sp.add_argument("--region-method", choices=["agglomerative", "spectral"])
        sp.add_argument("--embed-server", help="HTTP endpoint turning query text into an embedding")

    sp = common(sub.add_parser("query-object", help="retrieve object boxes"))
    query_flags(sp, True)
    sp.add_argument("--query-embedding", action="append", help="embedding id or vector file (repeatable)")
    sp.add_argument("--all-ground-truth", action="store_true", help="query every ground-truth object of --scene")
    sp.add_argument("--strategy", choices=["ms", "3dsg"], default="ms")
    sp.add_argument("--mode", choices=["avg", "max"])
    sp.add_argument("--out", default="results.json")
    sp.set_defaults(func=cmd_query_object)

    sp = common(sub.add_parser("monitor-region", help="places relevant to a task"))
    query_flags(sp, False)
    sp.add_argument("--query-embedding", action="append", required=True)
    sp.add_argument("--top-k", type=int)
    sp.add_argument("--out", default="places.json")
    sp.set_defaults(func=cmd_monitor_region)

    sp = common(sub.add_parser("plan-path", help="terrain-aware path between places"))
    sp.add_argument("--graph", required=True)
    sp.add_argument("--start", type=int, required=True)
    goal = sp.add_mutually_exclusive_group(required=True)
    goal.add_argument("--goal", type=int)
    goal.add_argument("--task-embedding")
    sp.add_argument("--map")
    sp.add_argument("--scene")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--embed-server")
    sp.add_argument("--terrain-policy", help="JSON policy file (overrides [policy])")
    sp.add_argument("--out", default="path.json")
    sp.add_argument("--svg", default=None, help="write an SVG overlay here")
    sp.set_defaults(func=cmd_plan_path)

    sp = common(sub.add_parser("eval", help="score retrieval results against ground truth"))
    sp.add_argument("--scene", required=True)
    sp.add_argument("--results", required=True)
    sp.add_argument("--iou-threshold", type=float, default=0.1)
    sp.add_argument("--method", default="ms")
    sp.add_argument("--out", default="metrics.json")
    sp.add_argument("--table", default="table.csv")
    sp.set_defaults(func=cmd_eval)
    return p


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(getattr(args, "config", None))
        return args.func(args, cfg)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_USAGE, "config", str(exc))
    except ProhibitedUnreachableError as exc:
        return _fail(EXIT_PROHIBITED, "unreachable_prohibited", str(exc))
    except DisconnectedUnreachableError as exc:
        return _fail(EXIT_DISCONNECTED, "unreachable_disconnected", str(exc))
    except NoGoalError as exc:
        return _fail(EXIT_NO_GOAL, "no_goal", str(exc))
    except DatasetError as exc:
        return _fail(EXIT_DATA, type(exc).__name__, str(exc))
    except (EmbeddingError, GridError, MissingHierarchyError) as exc:
        return _fail(EXIT_DATA, type(exc).__name__, str(exc))
    except KeyError as exc:
        return _fail(EXIT_DATA, "unknown_id", f"unknown id {exc}")
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        return _fail(EXIT_DATA, "input", str(exc))
    except TerrainSGError as exc:
        return _fail(EXIT_INTERNAL, type(exc).__name__, str(exc))
    except Exception as exc:  # noqa: BLE001 - report anything else as structured JSON
        return _fail(EXIT_INTERNAL, "internal", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
