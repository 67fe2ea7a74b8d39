from __future__ import annotations

import numpy as np
import pytest

from terrain_sg.dataset import load_scene
from terrain_sg.fusion import build_map
from terrain_sg.places import PlaceNode, PlacesLayer, build_places
from terrain_sg.regions import agglomerative_regions, spectral_regions
from terrain_sg.scenegen import generate_scene
from terrain_sg.scenegen.presets import margin_scene, small_scene, zone_scene
from terrain_sg.scenegraph import SceneGraph


class Built:
    """A generated scene carried through map, places and both hierarchies."""

    def __init__(self, root):
        self.root = root
        self.dataset = load_scene(root)
        self.map = build_map(self.dataset)
        self.places = build_places(self.map, self.dataset)
        self.graph = SceneGraph(
            self.places,
            {"agglomerative": agglomerative_regions(self.places), "spectral": spectral_regions(self.places)},
            [],
            self.map.embedding_dim,
            dict(self.map.terrain_names),
        )

    def query(self, k: int = 0) -> np.ndarray:
        return self.dataset.embeddings[self.dataset.ground_truth[k].query_embedding_id]


@pytest.fixture(scope="session")
def small_built(tmp_path_factory):
    return Built(generate_scene(small_scene(0), tmp_path_factory.mktemp("small")).root)


@pytest.fixture(scope="session")
def margin_built(tmp_path_factory):
    return Built(generate_scene(margin_scene(0), tmp_path_factory.mktemp("margin")).root)


@pytest.fixture(scope="session")
def zone_built(tmp_path_factory):
    return Built(generate_scene(zone_scene(0), tmp_path_factory.mktemp("zones")).root)


def make_layer(positions, terrains=None, edges=(), views=None) -> PlacesLayer:
    """Hand-built places layer; views default to one shared unit vector."""
    terrains = terrains or [0] * len(positions)
    nodes = []
    for i, (p, t) in enumerate(zip(positions, terrains)):
        v = np.array([1.0, 0.0]) if views is None else np.asarray(views[i], dtype=np.float64)
        nodes.append(PlaceNode(i, (float(p[0]), float(p[1])), t, 1.0, v, v))
    return PlacesLayer(nodes, [(a, b, float(np.hypot(*np.subtract(positions[a], positions[b])))) for a, b in edges])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
