"""Ready-made scene specs and random graphs used by tests and the CLI."""

from __future__ import annotations

import math

import numpy as np

from terrain_sg.places import PlaceNode, PlacesLayer
from terrain_sg.scenegen.generator import ObjectSpec, PatchSpec, SceneSpec, ZoneSpec


def _place_objects(rng, n, slots, footprint=(2.5, 3.5), depth=(2.0, 3.0), height=(1.5, 2.5)):
    objs = []
    for k in range(n):
        x, y = slots[k]
        objs.append(
            ObjectSpec(
                f"object{k}",
                (float(x + rng.uniform(-0.5, 0.5)), float(y + rng.uniform(-0.5, 0.5))),
                (float(rng.uniform(*footprint)), float(rng.uniform(*depth))),
                float(rng.uniform(*height)),
                float(rng.uniform(0, math.pi)),
            )
        )
    return objs


def margin_scene(seed: int = 0, n_objects: int = 10, margin: float = 0.1, noise: float = 0.05) -> SceneSpec:
    """Campus strip: sidewalk loop and spine, grass and asphalt, objects beside the paths."""
    rng = np.random.default_rng(seed)
    W, H = 60.0, 40.0
    patches = [
        PatchSpec("asphalt", "rect", [0, 0, W, H]),
        PatchSpec("grass", "rect", [8, 8, 52, 32]),
        PatchSpec("sidewalk", "corridor", [[3, 3], [57, 3], [57, 37], [3, 37], [3, 3]], 3.0),
        PatchSpec("sidewalk", "corridor", [[3, 20], [57, 20]], 3.0),
    ]
    per_row = math.ceil(n_objects / 2)
    xs = np.linspace(10, 50, per_row) if per_row > 1 else np.array([30.0])
    slots = [(x, 12.0) for x in xs] + [(x, 28.0) for x in xs]
    trajectory = [
        [[3, 3], [57, 3], [57, 37], [3, 37], [3, 3]],
        [[4, 20], [56, 20]],
        [[56, 21], [4, 21]],
    ]
    return SceneSpec(
        seed=seed,
        extent=(W, H),
        terrain_patches=patches,
        objects=_place_objects(rng, n_objects, slots),
        trajectory=trajectory,
        margin=margin,
        noise=noise,
    )


def small_scene(seed: int = 0, n_objects: int = 3, margin: float = 0.1, noise: float = 0.05) -> SceneSpec:
    """Compact scene (a few thousand map points) for exhaustive oracle checks."""
    rng = np.random.default_rng(seed)
    W, H = 24.0, 16.0
    patches = [
        PatchSpec("grass", "rect", [0, 0, W, H]),
        PatchSpec("sidewalk", "corridor", [[0, 8], [W, 8]], 2.0),
    ]
    xs = np.linspace(5, 19, n_objects) if n_objects > 1 else np.array([12.0])
    ys = [4.0 if k % 2 == 0 else 12.0 for k in range(n_objects)]
    return SceneSpec(
        seed=seed,
        extent=(W, H),
        terrain_classes=["sidewalk", "grass"],
        terrain_patches=patches,
        objects=_place_objects(rng, n_objects, list(zip(xs, ys)), footprint=(2.0, 3.0), depth=(1.5, 2.5)),
        trajectory=[[[1, 8], [23, 8]], [[23, 8.5], [1, 8.5]]],
        frame_spacing=3.0,
        margin=margin,
        noise=noise,
        max_range=20.0,
    )


def large_scene(seed: int = 0, n_objects: int = 20, noise: float = 0.05) -> SceneSpec:
    """120 x 110 m street grid over grass; about 50k map points."""
    rng = np.random.default_rng(seed)
    W, H = 120.0, 110.0
    xs, ys = [5.0, 60.0, 115.0], [5.0, 55.0, 105.0]
    patches = [PatchSpec("grass", "rect", [0, 0, W, H])]
    trajectory = []
    for y in ys:
        patches.append(PatchSpec("sidewalk", "corridor", [[0, y], [W, y]], 3.0))
        trajectory += [[[1, y], [W - 1, y]], [[W - 1, y + 0.5], [1, y + 0.5]]]
    for x in xs:
        patches.append(PatchSpec("sidewalk", "corridor", [[x, 0], [x, H]], 3.0))
        trajectory += [[[x, 1], [x, H - 1]], [[x + 0.5, H - 1], [x + 0.5, 1]]]
    per_row = math.ceil(n_objects / 4)
    slots = [(float(x), float(y)) for y in (12.0, 48.0, 62.0, 98.0) for x in np.linspace(12, 108, per_row)]
    return SceneSpec(
        seed=seed,
        extent=(W, H),
        terrain_classes=["sidewalk", "grass"],
        terrain_patches=patches,
        objects=_place_objects(rng, n_objects, slots),
        trajectory=trajectory,
        noise=noise,
    )


ZONE_LABELS = ("plaza", "garden", "parking", "court")


def zone_scene(seed: int = 0, noise: float = 0.05, objects_per_zone: int = 0) -> SceneSpec:
    """Four 40 m zones separated by 20 m gaps, each walked on a 10 m loop."""
    rng = np.random.default_rng(seed)
    size, gap = 40.0, 20.0
    corners = [(0.0, 0.0), (size + gap, 0.0), (0.0, size + gap), (size + gap, size + gap)]
    patches, zones, trajectory = [], [], []
    slots = []
    for label, (x0, y0) in zip(ZONE_LABELS, corners):
        cx, cy = x0 + size / 2, y0 + size / 2
        patches.append(PatchSpec("grass", "rect", [x0, y0, x0 + size, y0 + size]))
        ring = [[cx + 10 * math.cos(a), cy + 10 * math.sin(a)] for a in np.linspace(0, 2 * math.pi, 25)]
        ring[-1] = ring[0]
        patches.append(PatchSpec("sidewalk", "corridor", ring, 3.0))
        zones.append(ZoneSpec(label, [[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size]]))
        trajectory.append(ring)
        for k in range(objects_per_zone):
            a = 2 * math.pi * k / max(objects_per_zone, 1)
            slots.append((cx + 4 * math.cos(a), cy + 4 * math.sin(a)))
    extent = 2 * size + gap
    return SceneSpec(
        seed=seed,
        extent=(extent, extent),
        terrain_classes=["sidewalk", "grass"],
        terrain_patches=patches,
        objects=_place_objects(rng, len(slots), slots, footprint=(1.5, 2.0), depth=(1.0, 1.5)),
        trajectory=trajectory,
        zones=zones,
        noise=noise,
    )


def corridor_scene(length: float = 20.0, width: float = 0.5) -> SceneSpec:
    """A lone straight sidewalk strip walked end to end."""
    W, H = length + 4.0, 10.0
    y = 5.0
    return SceneSpec(
        seed=0,
        extent=(W, H),
        terrain_classes=["sidewalk"],
        terrain_patches=[PatchSpec("sidewalk", "rect", [2.0, y, 2.0 + length, y + width])],
        trajectory=[[[0.5, y + width / 2], [W - 0.5, y + width / 2]], [[W - 0.5, y + width / 2 + 0.01], [0.5, y + width / 2 + 0.01]]],
        frame_spacing=2.0,
        camera_height=0.6,
        focal=200.0,
        max_range=15.0,
    )


def touching_scene(seed: int = 0) -> SceneSpec:
    """Random strips of terrain that share borders, crossed by a sidewalk."""
    rng = np.random.default_rng(seed)
    W, H = 40.0, 24.0
    names = ["sidewalk", "grass", "asphalt"]
    n_strips = int(rng.integers(2, 5))
    cuts = np.sort(rng.uniform(6, W - 6, size=n_strips - 1))
    edges = np.concatenate([[0.0], np.round(cuts), [W]])
    patches = [
        PatchSpec(names[1 + k % 2], "rect", [float(a), 0.0, float(b), H]) for k, (a, b) in enumerate(zip(edges, edges[1:])) if b > a
    ]
    yc = float(np.round(rng.uniform(6, H - 6)))
    patches.append(PatchSpec("sidewalk", "corridor", [[0, yc], [W, yc]], float(rng.choice([2.0, 3.0]))))
    return SceneSpec(
        seed=seed,
        extent=(W, H),
        terrain_classes=names,
        terrain_patches=patches,
        trajectory=[[[1, yc], [W - 1, yc]], [[W - 1, yc + 0.5], [1, yc + 0.5]]],
        frame_spacing=3.0,
        max_range=30.0,
    )


PRESETS = {
    "margin": margin_scene,
    "small": small_scene,
    "large": large_scene,
    "zones": zone_scene,
    "corridor": corridor_scene,
    "touching": touching_scene,
}


def random_layer(rng: np.random.Generator, n_nodes: int, n_terrains: int = 3, extra_edges: float = 1.5) -> PlacesLayer:
    """Connected random planar graph with straight-line edge lengths."""
    pos = rng.uniform(0, 100, size=(n_nodes, 2))
    nodes = [PlaceNode(i, (float(p[0]), float(p[1])), int(rng.integers(n_terrains)), 1.0) for i, p in enumerate(pos)]
    edges = set()
    for i in range(1, n_nodes):
        edges.add((int(rng.integers(i)), i))
    for _ in range(int(extra_edges * n_nodes)):
        a, b = sorted(int(x) for x in rng.integers(n_nodes, size=2))
        if a != b:
            edges.add((a, b))
    return PlacesLayer(nodes, [(a, b, float(np.linalg.norm(pos[a] - pos[b]))) for a, b in sorted(edges)])
