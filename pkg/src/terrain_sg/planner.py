"""Terrain-aware shortest paths over the places layer."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

from terrain_sg.errors import (
    ConfigError,
    DisconnectedUnreachableError,
    NoGoalError,
    ProhibitedUnreachableError,
)
from terrain_sg.places import PlacesLayer

# Relative slack when deciding the search frontier has passed the best cost.
FRONTIER_SLACK = 1e-12


@dataclass(frozen=True)
class TerrainPolicy:
    multiplier: dict[int, float] = field(default_factory=dict)
    prohibited: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "prohibited", frozenset(int(t) for t in self.prohibited))
        mult = {int(k): float(v) for k, v in self.multiplier.items()}
        for t, m in mult.items():
            if not (m >= 1.0 and math.isfinite(m)):
                raise ConfigError(f"terrain multiplier for {t} must be finite and >= 1, got {m}")
        object.__setattr__(self, "multiplier", mult)

    def factor(self, terrain: int) -> float:
        return self.multiplier.get(terrain, 1.0)

    @classmethod
    def from_dict(cls, data: dict, terrain_names: dict[int, str] | None = None) -> "TerrainPolicy":
        """Build from ``{"multiplier": {terrain: m}, "prohibited": [terrain]}``.

        Terrains may be given by id or by name.
        """
        unknown = set(data) - {"multiplier", "prohibited"}
        if unknown:
            raise ConfigError(f"unknown terrain policy keys: {sorted(unknown)}")
        by_name = {v: k for k, v in (terrain_names or {}).items()}

        def tid(key) -> int:
            if isinstance(key, int):
                return key
            if isinstance(key, str) and key in by_name:
                return by_name[key]
            try:
                return int(key)
            except (TypeError, ValueError):
                raise ConfigError(f"unknown terrain {key!r}") from None

        return cls(
            {tid(k): v for k, v in data.get("multiplier", {}).items()},
            frozenset(tid(k) for k in data.get("prohibited", [])),
        )


@dataclass
class PathResult:
    nodes: list[int]
    total_cost: float
    total_length: float
    edges: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "total_cost": self.total_cost,
            "total_length": self.total_length,
            "edges": self.edges,
        }


def weighted_adjacency(layer: PlacesLayer, policy: TerrainPolicy, exempt=()) -> dict[int, list[tuple[int, float, float]]]:
    """``node -> [(neighbour, cost, length)]`` with prohibited nodes removed."""
    terrain = {n.id: n.terrain for n in layer.nodes}
    banned = {nid for nid, t in terrain.items() if t in policy.prohibited} - set(exempt)
    adj: dict[int, list[tuple[int, float, float]]] = {nid: [] for nid in terrain if nid not in banned}
    for a, b, length in layer.edges:
        if a in banned or b in banned:
            continue
        cost = length * max(policy.factor(terrain[a]), policy.factor(terrain[b]))
        adj[a].append((b, cost, length))
        adj[b].append((a, cost, length))
    for v in adj.values():
        v.sort()
    return adj


def _reachable(adj, start: int) -> set[int]:
    seen, stack = {start}, [start]
    while stack:
        u = stack.pop()
        for v, *_ in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def unreachable_error(layer: PlacesLayer, start: int, goal: int, policy: TerrainPolicy):
    """Pick the error class: blocked by prohibitions, or disconnected anyway."""
    free = weighted_adjacency(layer, TerrainPolicy())
    if goal in _reachable(free, start):
        return ProhibitedUnreachableError(f"no path from {start} to {goal} avoiding prohibited terrain")
    return DisconnectedUnreachableError(f"nodes {start} and {goal} lie in different components")


def _check_endpoints(layer: PlacesLayer, start: int, goal: int, policy: TerrainPolicy, exempt: bool):
    index = {n.id: n for n in layer.nodes}
    for name, nid in (("start", start), ("goal", goal)):
        if nid not in index:
            raise KeyError(f"{name} node {nid} not in places layer")
        if not exempt and index[nid].terrain in policy.prohibited:
            raise ProhibitedUnreachableError(f"{name} node {nid} lies on prohibited terrain {index[nid].terrain}")
    return index


def _heuristic_scale(layer: PlacesLayer, index) -> float:
    # Shrinks the straight-line heuristic if any edge is shorter than its chord.
    scale = 1.0
    for a, b, length in layer.edges:
        chord = math.dist(index[a].position, index[b].position)
        if chord > 0:
            scale = min(scale, length / chord)
    return max(scale, 0.0)


def plan_path(
    layer: PlacesLayer,
    start: int,
    goal: int,
    policy: TerrainPolicy | None = None,
    allow_prohibited_endpoints: bool = False,
) -> PathResult:
    """Cost-optimal path by A*; among equal-cost paths the smallest id sequence.

    Edge cost is length times the larger endpoint multiplier. Nodes on
    prohibited terrain are dropped from the graph.
    """
    policy = policy or TerrainPolicy()
    index = _check_endpoints(layer, start, goal, policy, allow_prohibited_endpoints)
    if start == goal:
        return PathResult([start], 0.0, 0.0)
    exempt = (start, goal) if allow_prohibited_endpoints else ()
    adj = weighted_adjacency(layer, policy, exempt)
    scale = _heuristic_scale(layer, index)
    gx, gy = index[goal].position

    def h(n: int) -> float:
        x, y = index[n].position
        return scale * math.hypot(x - gx, y - gy)

    g = {start: 0.0}
    heap = [(h(start), start)]
    best = math.inf
    while heap:
        f, u = heapq.heappop(heap)
        if f > best * (1 + FRONTIER_SLACK) + FRONTIER_SLACK:
            break
        if f > g[u] + h(u):
            continue  # stale entry
        if u == goal:
            best = min(best, g[u])
            continue
        for v, cost, _ in adj[u]:
            nv = g[u] + cost
            if nv < g.get(v, math.inf):
                g[v] = nv
                heapq.heappush(heap, (nv + h(v), v))
    if goal not in g:
        raise unreachable_error(layer, start, goal, policy)
    nodes = _smallest_tight_path(adj, g, start, goal)
    return _result(nodes, adj, index)


def _smallest_tight_path(adj, g: dict[int, float], start: int, goal: int) -> list[int]:
    # Nodes from which the goal is reachable along edges that realise g exactly.
    back = {goal}
    stack = [goal]
    while stack:
        v = stack.pop()
        for u, cost, _ in adj[v]:
            if u in g and u not in back and g[u] + cost == g[v]:
                back.add(u)
                stack.append(u)
    path, seen = [start], {start}
    while path[-1] != goal:
        u = path[-1]
        nxt = [v for v, cost, _ in adj[u] if v in back and v not in seen and g.get(v) == g[u] + cost]
        v = min(nxt)
        path.append(v)
        seen.add(v)
    return path


def _result(nodes: list[int], adj, index) -> PathResult:
    total_cost = total_length = 0.0
    edges = []
    for a, b in zip(nodes, nodes[1:]):
        cost, length = next((c, l) for v, c, l in adj[a] if v == b)
        total_cost += cost
        total_length += length
        edges.append(
            {"from": a, "to": b, "terrain": [index[a].terrain, index[b].terrain], "length": length, "cost": cost}
        )
    return PathResult(nodes, total_cost, total_length, edges)


def path_length_on_terrain(layer: PlacesLayer, path: PathResult, terrain: int) -> float:
    """Length of path edges with at least one endpoint on ``terrain``."""
    t = {n.id: n.terrain for n in layer.nodes}
    return float(sum(e["length"] for e in path.edges if terrain in (t[e["from"]], t[e["to"]])))


def select_goal_node(graph, smap, query, cfg=None) -> int:
    """Place linked to the best-scoring retrieved object."""
    from terrain_sg.query import QueryConfig, retrieve_objects_3dsg

    cfg = cfg or QueryConfig()
    result = retrieve_objects_3dsg(graph, smap, query, cfg)
    if not result.boxes:
        raise NoGoalError("no object matched the task query")
    return int(result.boxes[0].place_id)

