from __future__ import annotations

import json

import numpy as np
import pytest

from terrain_sg.boxes import OrientedBox
from terrain_sg.errors import FormatVersionError, SchemaError
from terrain_sg.fusion import FusionConfig, SemanticGlobalMap, merge_frame
from terrain_sg.persist import graphs_equal, load_graph, load_map, maps_equal, save_graph, save_map
from terrain_sg.regions import hierarchy_from_levels
from terrain_sg.scenegraph import ObjectNode, SceneGraph

from conftest import make_layer


def test_empty_map_roundtrip(tmp_path):
    save_map(SemanticGlobalMap(), tmp_path / "m.json")
    assert len(load_map(tmp_path / "m.json")) == 0


def test_one_point_two_slots_roundtrip(tmp_path):
    m = SemanticGlobalMap()
    e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    merge_frame(m, [((0, 0, 0), e1, None)] * 3 + [((0, 0, 0), e2, None)], FusionConfig())
    assert [c for _, c in m.slot_table(0)] == [3, 1]
    save_map(m, tmp_path / "m.json")
    back = load_map(tmp_path / "m.json")
    assert [c for _, c in back.slot_table(0)] == [3, 1]
    assert maps_equal(m, back)


def test_generated_map_saves_identically(margin_built, tmp_path):
    assert len(margin_built.map) >= 10_000
    save_map(margin_built.map, tmp_path / "a.json")
    save_map(margin_built.map, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    back = load_map(tmp_path / "a.json")
    assert maps_equal(margin_built.map, back)
    save_map(back, tmp_path / "c.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "c.json").read_bytes()


def test_empty_graph_roundtrip(tmp_path):
    save_graph(SceneGraph(), tmp_path / "g.json")
    back = load_graph(tmp_path / "g.json")
    assert back.places.nodes == [] and back.hierarchies == {}


def test_places_only_roundtrip(tmp_path):
    layer = make_layer([(0, 0), (1, 0), (1, 1)], [0, 1, 1], [(0, 1), (1, 2)])
    g = SceneGraph(layer, terrain_names={0: "sidewalk", 1: "grass"})
    save_graph(g, tmp_path / "g.json")
    back = load_graph(tmp_path / "g.json")
    assert back.places.adjacency() == layer.adjacency()
    assert graphs_equal(g, back)


def test_three_level_hierarchy_roundtrip(tmp_path):
    pos = [(0, 0), (1, 0), (10, 0), (11, 0), (50, 0), (51, 0)]
    views = np.eye(6)[:, :3][[0, 0, 1, 1, 2, 2]] + 0.1
    layer = make_layer(pos, edges=[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)], views=views)
    levels = [[[0, 1], [2, 3], [4, 5]], [[0, 1, 2, 3], [4, 5]], [[0, 1, 2, 3, 4, 5]]]
    h = hierarchy_from_levels("agglomerative", levels, layer)
    obj = ObjectNode(0, "bench", OrientedBox((1, 2, 0.5), (0.5, 0.5, 0.5), 0.3), 0.8, 1, np.ones(3))
    g = SceneGraph(layer, {"agglomerative": h}, [obj], 3, {0: "sidewalk"})
    save_graph(g, tmp_path / "g.json")
    back = load_graph(tmp_path / "g.json")
    bh = back.hierarchy("agglomerative")
    assert bh.parent == h.parent
    assert {k: r.children for k, r in bh.regions.items()} == {k: r.children for k, r in h.regions.items()}
    for k, r in h.regions.items():
        assert np.array_equal(bh.regions[k].embedding, r.embedding)
    assert back.objects[0].box == obj.box
    save_graph(back, tmp_path / "g2.json")
    assert (tmp_path / "g.json").read_bytes() == (tmp_path / "g2.json").read_bytes()


def test_generated_graph_saves_identically(small_built, tmp_path):
    save_graph(small_built.graph, tmp_path / "a.json")
    back = load_graph(tmp_path / "a.json")
    assert graphs_equal(small_built.graph, back)
    save_graph(back, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_wrong_kind_and_version(tmp_path):
    save_map(SemanticGlobalMap(), tmp_path / "m.json")
    with pytest.raises(SchemaError):
        load_graph(tmp_path / "m.json")
    data = json.loads((tmp_path / "m.json").read_text())
    data["format_version"] = 99
    (tmp_path / "m.json").write_text(json.dumps(data))
    with pytest.raises(FormatVersionError):
        load_map(tmp_path / "m.json")


def test_malformed_map_content(tmp_path):
    m = SemanticGlobalMap()
    merge_frame(m, [((0, 0, 0), np.array([1.0, 0.0]), None)], FusionConfig())
    save_map(m, tmp_path / "m.json")
    data = json.loads((tmp_path / "m.json").read_text())
    data["points"][0]["s"] = [[5, 1]]
    (tmp_path / "m.json").write_text(json.dumps(data))
    with pytest.raises(SchemaError):
        load_map(tmp_path / "m.json")
    del data["points"]
    (tmp_path / "m.json").write_text(json.dumps(data))
    with pytest.raises(SchemaError):
        load_map(tmp_path / "m.json")


def test_dangling_graph_edge(tmp_path):
    g = SceneGraph(make_layer([(0, 0), (1, 0)], edges=[(0, 1)]))
    save_graph(g, tmp_path / "g.json")
    data = json.loads((tmp_path / "g.json").read_text())
    data["places"]["edges"][0][1] = 7
    (tmp_path / "g.json").write_text(json.dumps(data))
    with pytest.raises(SchemaError):
        load_graph(tmp_path / "g.json")
