from __future__ import annotations

import math

import numpy as np
import pytest

from terrain_sg.core import CameraIntrinsics, Pose, TerrainClass
from terrain_sg.dataset import FrameRecord, load_scene, write_scene
from terrain_sg.errors import GridError
from terrain_sg.fusion import FusionConfig, SemanticGlobalMap, merge_frame
from terrain_sg.places import (
    OccupancyGrid,
    PlaceNode,
    PlacesLayer,
    assign_place_embeddings,
    brushfire_gvd,
    connect_terrain_graphs,
    extract_place_nodes,
    rasterize_terrain,
)
from terrain_sg.scenegen.generator import camera_rotation
from terrain_sg.scenegen.oracles import brute_force_clearance

RES = 0.5


def grid(free) -> OccupancyGrid:
    return OccupancyGrid((0.0, 0.0), RES, np.asarray(free, dtype=bool))


def corridor(width_cells: int, length_cells: int = 40) -> OccupancyGrid:
    free = np.zeros((width_cells + 2, length_cells), dtype=bool)
    free[1 : 1 + width_cells, :] = True
    return grid(free)


# -- rasterization ---------------------------------------------------------------


def _terrain_map(points, terrain=0) -> SemanticGlobalMap:
    m = SemanticGlobalMap()
    merge_frame(m, [(p, np.array([1.0, 0.0]), terrain) for p in points], FusionConfig())
    return m


def test_rasterize_empty_and_single():
    assert rasterize_terrain(SemanticGlobalMap(), 0).is_empty
    g = rasterize_terrain(_terrain_map([(3.2, 4.1, -0.05)]), 0)
    assert g.free.shape == (3, 3)
    assert g.free.sum() == 1 and g.free[1, 1]
    assert rasterize_terrain(_terrain_map([(3.2, 4.1, -0.05)]), 1).is_empty


def test_rasterize_filled_square():
    xs = np.arange(0.25, 10, 0.5)
    pts = [(x, y, -0.05) for x in xs for y in xs]
    g = rasterize_terrain(_terrain_map(pts), 0, 0.5)
    assert g.free.sum() >= 400


# -- brushfire --------------------------------------------------------------------


def test_brushfire_rejects_degenerate_grids():
    with pytest.raises(GridError):
        brushfire_gvd(grid(np.ones((5, 5))))
    with pytest.raises(GridError):
        brushfire_gvd(grid(np.zeros((5, 5))))


def test_brushfire_matches_brute_force_on_random_grids():
    rng = np.random.default_rng(11)
    for _ in range(20):
        h, w = rng.integers(3, 60, size=2)
        free = rng.random((h, w)) > rng.uniform(0.05, 0.6)
        if free.all() or not free.any():
            continue
        g = grid(free)
        bf = brushfire_gvd(g)
        exact = brute_force_clearance(g)
        assert np.all(np.abs(bf.distance - exact) <= math.sqrt(2) * RES + 1e-12)
        assert np.all(bf.distance[~free] == 0)


@pytest.mark.parametrize("width", [1, 3, 5, 7])
def test_corridor_gvd_is_centerline(width):
    bf = brushfire_gvd(corridor(width))
    expected = np.zeros_like(bf.gvd)
    expected[1 + width // 2, :] = True
    assert np.array_equal(bf.gvd, expected)


def test_square_room_skeleton_has_diagonals():
    free = np.zeros((11, 11), dtype=bool)
    free[1:10, 1:10] = True
    bf = brushfire_gvd(grid(free))
    for i in range(1, 10):
        assert bf.gvd[i, i] and bf.gvd[i, 10 - i]
    # Every skeleton cell is a local maximum of the exact clearance along some axis pair.
    exact = brute_force_clearance(grid(free))
    for iy, ix in bf.gvd_cells():
        assert exact[iy, ix] >= min(exact[iy - 1, ix], exact[iy + 1, ix], exact[iy, ix - 1], exact[iy, ix + 1])


def test_single_obstacle_has_no_skeleton():
    free = np.ones((21, 21), dtype=bool)
    free[10, 10] = False
    assert not brushfire_gvd(grid(free)).gvd.any()


# -- node extraction ------------------------------------------------------------------


def _is_path_graph(layer: PlacesLayer) -> bool:
    deg = layer.degree()
    return len(layer.components()) == 1 and len(layer.edges) == len(layer.nodes) - 1 and max(deg.values()) <= 2


def test_straight_corridor_gives_collinear_path():
    bf = brushfire_gvd(corridor(3, 40))
    layer = extract_place_nodes(bf, spacing=2.0)
    assert 8 <= len(layer.nodes) <= 11
    ys = {n.position[1] for n in layer.nodes}
    assert len(ys) == 1
    assert _is_path_graph(layer)


def test_empty_skeleton_gives_empty_graph():
    free = np.ones((21, 21), dtype=bool)
    free[10, 10] = False
    layer = extract_place_nodes(brushfire_gvd(grid(free)))
    assert layer.nodes == [] and layer.edges == []


def test_two_disconnected_corridors():
    free = np.zeros((12, 40), dtype=bool)
    free[1:4, :] = True
    free[8:11, :] = True
    layer = extract_place_nodes(brushfire_gvd(grid(free)), spacing=2.0)
    assert len(layer.components()) == 2


def test_node_ids_start_at_offset():
    layer = extract_place_nodes(brushfire_gvd(corridor(3)), spacing=2.0, terrain=4, first_id=100)
    assert min(layer.ids()) == 100 and {n.terrain for n in layer.nodes} == {4}


# -- linking --------------------------------------------------------------------------------


def _path(terrain, y, xs, first_id):
    nodes = [PlaceNode(first_id + k, (float(x), float(y)), terrain, 1.0) for k, x in enumerate(xs)]
    edges = [(first_id + k, first_id + k + 1, float(xs[k + 1] - xs[k])) for k in range(len(xs) - 1)]
    return PlacesLayer(nodes, edges)


def test_sidewalk_and_grass_link_both_endpoints():
    side = _path(0, 0.0, [0, 2, 4, 6], 0)
    grass = _path(1, 3.0, [0, 2, 4, 6], 4)
    layer = connect_terrain_graphs([side, grass])
    terrain = {n.id: n.terrain for n in layer.nodes}
    cross = [(a, b) for a, b, _ in layer.edges if terrain[a] != terrain[b]]
    assert len(cross) >= 2
    linked = {a for a, b in cross} | {b for a, b in cross}
    assert {0, 3} <= linked
    assert len(layer.components()) == 1


def test_single_terrain_has_no_cross_edges():
    side = _path(0, 0.0, [0, 2, 4], 0)
    layer = connect_terrain_graphs([side])
    assert layer.edges == side.edges


def test_equidistant_link_breaks_tie_by_id():
    lone = PlacesLayer([PlaceNode(0, (0.0, 0.0), 0, 1.0)], [])
    grass = PlacesLayer(
        [PlaceNode(5, (0.0, 2.0), 1, 1.0), PlaceNode(3, (0.0, -2.0), 1, 1.0), PlaceNode(7, (-3.0, 0.0), 1, 1.0)],
        [(3, 5, 4.0), (5, 7, 3.6), (3, 7, 3.6)],
    )
    layer = connect_terrain_graphs([lone, grass], bridge_components=False)
    assert [e for e in layer.edges if 0 in e[:2]] == [(0, 3, 2.0)]


def _loop(terrain, cx, first_id):
    nodes = [PlaceNode(first_id + k, (cx + math.cos(a), math.sin(a)), terrain, 1.0) for k, a in enumerate([0.0, 2.1, 4.2])]
    ids = [n.id for n in nodes]
    return PlacesLayer(nodes, [(ids[0], ids[1], 1.7), (ids[1], ids[2], 1.7), (ids[0], ids[2], 1.7)])


def test_bridging_joins_isolated_loops():
    parts = [_loop(0, 0.0, 0), _loop(1, 10.0, 3)]
    assert len(connect_terrain_graphs(parts, bridge_components=False).components()) == 2
    joined = connect_terrain_graphs(parts)
    assert len(joined.components()) == 1
    assert len(joined.edges) == 7


# -- view embeddings --------------------------------------------------------------------------


def _view_dataset(tmp_path, cameras):
    """Frames at ``(x, y, heading, embedding)`` with a single dummy point each."""
    intr = CameraIntrinsics(320, 320, 320, 240, 640, 480)
    frames, emb = [], {"t": np.array([0.0, 0.0, 1.0])}
    for k, (x, y, heading, e) in enumerate(cameras):
        pose = Pose.from_matrix(camera_rotation(heading), (x, y, 1.5))
        frames.append((FrameRecord(float(k), pose, intr, f"lidar/{k}.bin", (), f"img:{k}"), np.zeros((1, 3))))
        emb[f"img:{k}"] = np.asarray(e, dtype=np.float64)
    root = write_scene(
        tmp_path,
        embedding_dim=3,
        terrain_classes=[TerrainClass("grass", 0)],
        terrain_embedding_ids={0: "t"},
        frames=frames,
        embeddings=emb,
    )
    return load_scene(root)


def test_view_embedding_single_and_mean(tmp_path):
    e1, e2 = [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]
    ds = _view_dataset(tmp_path, [(0, 0, 0.0, e1), (0, 1, 0.0, e2), (20, 0, 0.0, [0, 0, 1])])
    layer = PlacesLayer([PlaceNode(0, (5.0, 0.5), 0, 1.0), PlaceNode(1, (40.0, 0.0), 0, 1.0)], [])
    out = assign_place_embeddings(layer, ds, radius=20.0)
    assert np.array_equal(out.nodes[0].view_embedding, np.mean([e1, e2], axis=0))
    assert np.array_equal(out.nodes[1].view_embedding, [0, 0, 1])
    assert np.array_equal(out.nodes[0].terrain_embedding, [0, 0, 1])


def test_view_embedding_fallback_to_far_frame(tmp_path):
    e1 = [1.0, 0.0, 0.0]
    ds = _view_dataset(tmp_path, [(0, 0, 0.0, e1), (0, 5, math.pi, [0, 1, 0])])
    layer = PlacesLayer([PlaceNode(0, (30.0, 0.0), 0, 1.0)], [])
    out = assign_place_embeddings(layer, ds, radius=20.0)
    assert np.array_equal(out.nodes[0].view_embedding, e1)


def test_view_embedding_requires_frames(tmp_path):
    ds = _view_dataset(tmp_path, [])
    with pytest.raises(ValueError):
        assign_place_embeddings(PlacesLayer([PlaceNode(0, (0.0, 0.0), 0, 1.0)], []), ds)


def test_generated_places_are_connected(small_built):
    assert len(small_built.places.components()) == 1
    for n in small_built.places.nodes:
        assert n.view_embedding is not None and n.terrain_embedding is not None
