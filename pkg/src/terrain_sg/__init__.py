"""Terrain-aware metric-semantic mapping and layered scene graphs."""

from terrain_sg.core import CameraIntrinsics, Pose, TerrainClass, cosine_similarity, transform_point
from terrain_sg.dataset import SceneDataset, load_scene
from terrain_sg.fusion import FusionConfig, ResolveMode, SemanticGlobalMap, build_map
from terrain_sg.persist import load_graph, load_map, save_graph, save_map
from terrain_sg.places import PlacesConfig, PlacesLayer, build_places
from terrain_sg.planner import PathResult, TerrainPolicy, plan_path, select_goal_node
from terrain_sg.query import QueryConfig, monitor_region, retrieve_objects_3dsg, retrieve_objects_ms
from terrain_sg.regions import RegionConfig, agglomerative_regions, spectral_regions
from terrain_sg.scenegraph import SceneGraph

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "Pose",
    "TerrainClass",
    "cosine_similarity",
    "transform_point",
    "SceneDataset",
    "load_scene",
    "FusionConfig",
    "ResolveMode",
    "SemanticGlobalMap",
    "build_map",
    "load_graph",
    "load_map",
    "save_graph",
    "save_map",
    "PlacesConfig",
    "PlacesLayer",
    "build_places",
    "PathResult",
    "TerrainPolicy",
    "plan_path",
    "select_goal_node",
    "QueryConfig",
    "monitor_region",
    "retrieve_objects_3dsg",
    "retrieve_objects_ms",
    "RegionConfig",
    "agglomerative_regions",
    "spectral_regions",
    "SceneGraph",
]
