from __future__ import annotations

import numpy as np
import pytest

from terrain_sg.clustering import dbscan
from terrain_sg.core import CameraIntrinsics, Pose, TerrainClass, cosine_similarity
from terrain_sg.dataset import FrameRecord, MaskRecord, load_scene, write_scene
from terrain_sg.errors import EmbeddingError
from terrain_sg.fusion import (
    FusionConfig,
    MapPoint,
    ResolveMode,
    SemanticGlobalMap,
    associate_masks,
    build_map,
    largest_cluster_filter,
    merge_frame,
    project_points,
    resolve_point_embedding,
)
from terrain_sg.scenegen.oracles import naive_dbscan

INTR = CameraIntrinsics(100, 100, 50, 50, 100, 100)
E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])


# -- projection and association ------------------------------------------------


def test_projection_examples():
    wide = CameraIntrinsics(100, 100, 50, 50, 200, 200)
    out = project_points([[0, 0, 2], [0, 0, -1], [0.5, 0, 1]], wide)
    assert out[0] == (0, 50.0, 50.0, 2.0)
    assert [o[0] for o in out] == [0, 2]
    assert np.allclose(out[1][1:], (100, 50, 1), atol=1e-12)


def test_projection_drops_pixels_outside_and_far_points():
    out = project_points([[10, 0, 1], [0, 0, 50]], INTR, max_range=20)
    assert out == []


def test_association_examples():
    square = MaskRecord(((10, 10), (30, 10), (30, 30), (10, 30)), "a")
    out = associate_masks([(0, 20, 20), (1, 80, 80)], [square])
    assert out[0].tolist() == [0]


def test_terrain_mask_wins_overlap():
    obj = MaskRecord(((0, 0), (40, 0), (40, 40), (0, 40)), "obj")
    ground = MaskRecord(((20, 20), (60, 20), (60, 60), (20, 60)), "grass", 0)
    pts = [(0, 30, 30), (1, 10, 10), (2, 50, 50)]
    out = associate_masks(pts, [obj, ground])
    assert out[0].tolist() == [1]
    assert out[1].tolist() == [0, 2]


# -- clustering ------------------------------------------------------------------


def test_dbscan_matches_naive_oracle():
    rng = np.random.default_rng(0)
    for trial in range(60):
        n = int(rng.integers(1, 120))
        pts = rng.uniform(0, 5, size=(n, 3)) * rng.choice([0.3, 1.0, 3.0])
        eps = float(rng.uniform(0.2, 1.5))
        k = int(rng.integers(1, 8))
        assert dbscan(pts, eps, k).tolist() == naive_dbscan(pts, eps, k)


def test_largest_cluster_examples():
    cfg = FusionConfig(dbscan_eps=0.5, dbscan_min_pts=5)
    rng = np.random.default_rng(1)
    tight = rng.uniform(0, 0.1, size=(10, 3))
    pts = np.vstack([tight, [[50, 0, 0]]])
    assert largest_cluster_filter(pts, cfg).tolist() == list(range(10))
    sparse = np.arange(8)[:, None] * np.array([[3.0, 0, 0]])
    assert largest_cluster_filter(sparse, cfg).tolist() == []
    six_four = np.vstack([rng.uniform(0, 0.1, (4, 3)) + 20, rng.uniform(0, 0.1, (6, 3))])
    small_cfg = FusionConfig(dbscan_eps=0.5, dbscan_min_pts=3)
    assert largest_cluster_filter(six_four, small_cfg).tolist() == list(range(4, 10))
    assert largest_cluster_filter(np.empty((0, 3)), cfg).tolist() == []


def test_largest_cluster_tie_prefers_lowest_index():
    cfg = FusionConfig(dbscan_eps=0.5, dbscan_min_pts=2)
    pts = np.array([[10, 0, 0], [10.1, 0, 0], [0, 0, 0], [0.1, 0, 0]])
    assert largest_cluster_filter(pts, cfg).tolist() == [0, 1]


# -- merging -------------------------------------------------------------------------


def test_merge_examples():
    cfg = FusionConfig()
    m = SemanticGlobalMap()
    merge_frame(m, [((0.1, 0.1, 0.1), E1, None)], cfg)
    assert len(m) == 1 and m.slot_table(0) == [(0, 1)]
    merge_frame(m, [((0.1, 0.1, 0.1), E1, None)], cfg)
    assert m.slot_table(0) == [(0, 2)]
    merge_frame(m, [((0.2, 0.1, 0.1), E2, None)], cfg)
    assert [c for _, c in m.slot_table(0)] == [2, 1]


def test_dedup_picks_most_similar_slot():
    cfg = FusionConfig(dedup_threshold=0.5)
    m = SemanticGlobalMap()
    a, b = np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])
    near_b = np.array([0.6, 0.0, 0.8])
    merge_frame(m, [((0, 0, 0), a, None), ((0, 0, 0), b, None)], FusionConfig(dedup_threshold=0.9))
    merge_frame(m, [((0, 0, 0), near_b, None)], cfg)
    assert [c for _, c in m.slot_table(0)] == [1, 2]


def test_resolve_examples():
    p = MapPoint(np.zeros(3), ((E1, 3),))
    for mode in ResolveMode:
        assert np.array_equal(resolve_point_embedding(p, mode), E1)
    p = MapPoint(np.zeros(3), ((E1, 3), (E2, 1)))
    assert np.array_equal(resolve_point_embedding(p, "max"), E1)
    p = MapPoint(np.zeros(3), ((np.array([1.0, 0.0]), 1), (np.array([0.0, 1.0]), 1)))
    assert np.array_equal(resolve_point_embedding(p, "avg"), [0.5, 0.5])
    p = MapPoint(np.zeros(3), ((E1, 2), (E2, 2)))
    assert np.array_equal(resolve_point_embedding(p, "max"), E1)
    with pytest.raises(EmbeddingError):
        resolve_point_embedding(MapPoint(np.zeros(3), ()), "avg")


def test_dimension_mismatch_rejected():
    m = SemanticGlobalMap(embedding_dim=3)
    with pytest.raises(ValueError):
        m.register(np.ones(4))


# -- replay ----------------------------------------------------------------------------


def _one_frame_dataset(tmp_path, frames=1):
    grid = np.stack(np.meshgrid(np.arange(-1, 1, 0.1), np.arange(-1, 1, 0.1)), -1).reshape(-1, 2)
    pts = np.column_stack([grid, np.full(len(grid), 4.0)])
    whole = MaskRecord(((0, 0), (100, 0), (100, 100), (0, 100)), "e")
    recs = [
        (FrameRecord(float(k), Pose((0.0, 0.0, 0.0)), INTR, f"lidar/{k}.bin", (whole,)), pts)
        for k in range(frames)
    ]
    root = write_scene(
        tmp_path,
        embedding_dim=3,
        terrain_classes=[TerrainClass("grass", 0)],
        terrain_embedding_ids={0: "t"},
        frames=recs,
        embeddings={"e": E1, "t": E2},
    )
    return load_scene(root)


def test_empty_dataset_gives_empty_map(tmp_path):
    ds = _one_frame_dataset(tmp_path, frames=0)
    assert len(build_map(ds)) == 0


def test_single_mask_end_to_end(tmp_path):
    ds = _one_frame_dataset(tmp_path)
    m = build_map(ds)
    assert len(m) > 0
    assert m.total_assignments() == 400
    for i in range(len(m)):
        p = m.point(i)
        assert len(p.slots) == 1 and np.array_equal(p.slots[0][0], E1)
        assert p.terrain is None


def test_replay_five_times_scales_counts(small_built):
    once = small_built.map
    five = build_map(small_built.dataset, repeat=5)
    assert np.array_equal(once.positions(), five.positions())
    for i in range(len(once)):
        a, b = once.slot_table(i), five.slot_table(i)
        assert [e for e, _ in a] == [e for e, _ in b]
        assert [5 * c for _, c in a] == [c for _, c in b]


def test_dedup_invariant_on_generated_scene(small_built):
    m = small_built.map
    for i in range(len(m)):
        vecs = [e for e, _ in m.point(i).slots]
        for a in range(len(vecs)):
            for b in range(a + 1, len(vecs)):
                assert cosine_similarity(vecs[a], vecs[b]) < 0.9


def test_points_sit_at_voxel_centres(small_built):
    m = small_built.map
    h = m.voxel_leaf
    pos = m.positions()
    assert np.allclose((pos / h) - 0.5, np.round(pos / h - 0.5))
    assert len({tuple(np.floor(p / h).astype(int)) for p in pos}) == len(m)


def test_terrain_labels_cover_ground(small_built):
    m = small_built.map
    labels = m.terrain_labels()
    ground = m.positions()[:, 2] < 0
    assert set(labels[ground].tolist()) <= {0, 1}
    assert (labels[ground] >= 0).all()


def test_build_map_is_deterministic(small_built):
    again = build_map(small_built.dataset)
    assert np.array_equal(again.positions(), small_built.map.positions())
    assert [again.slot_table(i) for i in range(len(again))] == [
        small_built.map.slot_table(i) for i in range(len(again))
    ]
