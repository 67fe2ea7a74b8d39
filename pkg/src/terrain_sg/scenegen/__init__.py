"""Synthetic scene generation and reference oracles."""

from terrain_sg.scenegen.generator import ObjectSpec, PatchSpec, SceneSpec, ZoneSpec, generate_scene
from terrain_sg.scenegen.oracles import brute_force_clearance, naive_dbscan, oracle_retrieval, oracle_shortest_path
from terrain_sg.scenegen.presets import PRESETS, random_layer

__all__ = [
    "ObjectSpec",
    "PatchSpec",
    "SceneSpec",
    "ZoneSpec",
    "generate_scene",
    "brute_force_clearance",
    "naive_dbscan",
    "oracle_retrieval",
    "oracle_shortest_path",
    "PRESETS",
    "random_layer",
]
