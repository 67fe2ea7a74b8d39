"""Layered scene graph container: places, region hierarchies, object nodes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from terrain_sg.boxes import OrientedBox
from terrain_sg.errors import MissingHierarchyError
from terrain_sg.places import PlacesLayer
from terrain_sg.regions import RegionHierarchy

HIERARCHY_PREFERENCE = ("agglomerative", "spectral", "aib")


@dataclass
class ObjectNode:
    id: int
    label: str
    box: OrientedBox
    score: float
    place_id: int | None = None
    embedding: np.ndarray | None = None


@dataclass
class SceneGraph:
    places: PlacesLayer = field(default_factory=PlacesLayer)
    hierarchies: dict[str, RegionHierarchy] = field(default_factory=dict)
    objects: list[ObjectNode] = field(default_factory=list)
    embedding_dim: int | None = None
    terrain_names: dict[int, str] = field(default_factory=dict)

    def hierarchy(self, method: str | None = None) -> RegionHierarchy:
        """Named hierarchy, or the first available in preference order."""
        if method is not None:
            if method not in self.hierarchies:
                raise MissingHierarchyError(f"graph has no {method!r} region hierarchy")
            return self.hierarchies[method]
        for name in HIERARCHY_PREFERENCE:
            if name in self.hierarchies:
                return self.hierarchies[name]
        if self.hierarchies:
            return self.hierarchies[sorted(self.hierarchies)[0]]
        raise MissingHierarchyError("graph has no region hierarchy")
