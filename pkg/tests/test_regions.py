from __future__ import annotations

import itertools

import numpy as np
import pytest
from scipy.spatial.distance import jensenshannon

from terrain_sg.regions import (
    RegionConfig,
    agglomerative_regions,
    aib_regions_baseline,
    distance_matrix,
    fiedler_vector,
    hierarchy_from_levels,
    merge_cost,
    place_pair_distance,
    semantic_difference,
    spectral_regions,
    spectral_tree,
    task_conditionals,
)

from conftest import make_layer

CFG = RegionConfig()


def _partition_set(part):
    return {frozenset(c) for c in part}


# -- distance ----------------------------------------------------------------


def test_pair_distance_examples():
    layer = make_layer([(0, 0), (10, 0), (0, 0)], views=[[1, 0], [1, 0], [0, 1]])
    a, b, c = layer.nodes
    assert place_pair_distance(a, a) == 0.0
    assert place_pair_distance(a, b) == 10.0
    assert place_pair_distance(a, c) == 50.0


def test_distance_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    layer = make_layer(rng.uniform(0, 100, (12, 2)), views=rng.normal(size=(12, 5)))
    d = distance_matrix(layer.nodes, CFG)
    for i, j in itertools.product(range(12), repeat=2):
        assert abs(d[i, j] - place_pair_distance(layer.nodes[i], layer.nodes[j])) <= 1e-9


# -- agglomerative -----------------------------------------------------------------


def naive_average_linkage(d: np.ndarray, threshold: float) -> list[list[int]]:
    """Merge closest clusters by mean pairwise distance while that mean is within ``threshold``."""
    clusters = [[i] for i in range(len(d))]
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                avg = float(np.mean(d[np.ix_(clusters[a], clusters[b])]))
                if best is None or avg < best[0]:
                    best = (avg, a, b)
        if best[0] > threshold:
            break
        _, a, b = best
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    return clusters


def test_single_place_gives_four_singleton_levels():
    h = agglomerative_regions(make_layer([(0, 0)]))
    assert h.depth == 4 and all(level == [[0]] for level in h.levels)


def test_far_clusters_stay_apart():
    pos = [(0, 0), (1, 0), (0, 1), (1000, 0), (1001, 0), (1000, 1)]
    h = agglomerative_regions(make_layer(pos))
    assert [len(level) for level in h.levels] == [2, 2, 2, 2]


def test_eight_nodes_two_groups():
    pos = [(0, 0), (2, 0), (0, 2), (2, 2), (150, 0), (152, 0), (150, 2), (152, 2)]
    layer = make_layer(pos)
    h = agglomerative_regions(layer)
    assert [len(level) for level in h.levels] == [2, 2, 1, 1]
    d = distance_matrix(layer.nodes, CFG)
    for t, level in zip(CFG.agglo_thresholds, h.levels):
        assert _partition_set(level) == _partition_set(naive_average_linkage(d, t))


def test_agglomerative_matches_naive_oracle_on_random_layers():
    rng = np.random.default_rng(5)
    for _ in range(15):
        n = int(rng.integers(2, 25))
        views = rng.normal(size=(n, 4))
        layer = make_layer(rng.uniform(0, 600, (n, 2)), views=views)
        h = agglomerative_regions(layer)
        d = distance_matrix(layer.nodes, CFG)
        for t, level in zip(CFG.agglo_thresholds, h.levels):
            assert _partition_set(level) == _partition_set(naive_average_linkage(d, t))


def test_agglomerative_levels_nest():
    rng = np.random.default_rng(6)
    layer = make_layer(rng.uniform(0, 800, (40, 2)), views=rng.normal(size=(40, 4)))
    h = agglomerative_regions(layer)
    for fine, coarse in zip(h.levels, h.levels[1:]):
        for c in fine:
            assert any(set(c) <= set(p) for p in coarse)
    for r in h.regions.values():
        if r.level > 1:
            assert sorted(m for ch in r.children for m in h.regions[ch].members) == sorted(r.members)


# -- spectral -----------------------------------------------------------------------


def test_semantic_difference_examples():
    assert semantic_difference(np.array([[1.0, 0.0], [2.0, 0.0]])) == 0.0
    unequal = np.array([[1.0, 0.0]] * 3 + [[0.0, 1.0]])
    assert semantic_difference(unequal) > 0.5


def test_uniform_small_area_is_one_region():
    rng = np.random.default_rng(1)
    h = spectral_regions(make_layer(rng.uniform(0, 10, (9, 2))))
    assert h.depth == 1 and h.levels == [[sorted(range(9))]]


def ncut(affinity, side):
    side = np.asarray(side, dtype=bool)
    cut = affinity[np.ix_(side, ~side)].sum()
    deg = affinity.sum(axis=1)
    return cut / deg[side].sum() + cut / deg[~side].sum()


def _exhaustive_min_ncut(affinity):
    n = len(affinity)
    best = None
    for mask in range(1, 2 ** (n - 1)):
        side = [(mask >> k) & 1 == 1 for k in range(n)]
        v = ncut(affinity, side)
        if best is None or v < best[0]:
            best = (v, frozenset(k for k in range(n) if side[k]))
    return best[1]


def test_orthogonal_groups_first_split_separates_exactly():
    rng = np.random.default_rng(2)
    a = [(float(x), float(y)) for x, y in rng.uniform([0, 0], [8, 10], (4, 2))]
    b = [(float(x), float(y)) for x, y in rng.uniform([500, 0], [508, 10], (7, 2))]
    views = [[1.0, 0.0]] * 4 + [[0.0, 1.0]] * 7
    layer = make_layer(a + b, views=views)
    root = spectral_tree(layer)
    assert len(root.children) == 2
    halves = {frozenset(c.members) for c in root.children}
    assert halves == {frozenset(range(4)), frozenset(range(4, 11))}
    d = distance_matrix(layer.nodes, CFG)
    aff = np.exp(-d / CFG.lambda_semantic)
    np.fill_diagonal(aff, 0.0)
    best = _exhaustive_min_ncut(aff)
    assert {best, frozenset(range(11)) - best} == halves


def test_fiedler_sign_orientation():
    aff = np.array([[0, 1, 0.01, 0.0], [1, 0, 0.0, 0.01], [0.01, 0.0, 0, 1], [0.0, 0.01, 1, 0]])
    f = fiedler_vector(aff)
    assert f[0] >= 0
    assert (f[:2] > 0).all() and (f[2:] < 0).all()


def test_three_nodes_at_most_one_split():
    layer = make_layer([(0, 0), (300, 0), (0, 300)], views=[[1, 0], [0, 1], [1, 1]])
    root = spectral_tree(layer)
    assert len(root.children) <= 2
    for c in root.children:
        assert not c.children and c.stop_reason == "size"


def _leaves(n):
    if not n.children:
        yield n
    for c in n.children:
        yield from _leaves(c)


def test_spectral_leaves_respect_stopping_rules():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = int(rng.integers(3, 40))
        layer = make_layer(rng.uniform(0, 400, (n, 2)), views=rng.normal(size=(n, 3)))
        h = spectral_regions(layer)
        index = {nd.id: nd for nd in layer.nodes}
        for leaf in _leaves(h.tree):
            emb = np.array([index[m].view_embedding for m in leaf.members])
            pos = np.array([index[m].position for m in leaf.members])
            span = pos.max(axis=0) - pos.min(axis=0)
            if leaf.stop_reason == "size":
                assert len(leaf.members) <= 2
            elif leaf.stop_reason == "semantic":
                assert semantic_difference(emb) <= CFG.spectral_sem_diff_max
            elif leaf.stop_reason == "area":
                assert span[0] * span[1] <= CFG.spectral_area_max
            else:
                assert leaf.stop_reason == "degenerate"
        for fine, coarse in zip(h.levels, h.levels[1:]):
            for c in fine:
                assert any(set(c) <= set(p) for p in coarse)


# -- embeddings ---------------------------------------------------------------------------


def test_region_embeddings_are_recursive_means():
    views = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [3.0, 0.0], [0.0, 2.0]]
    layer = make_layer([(0, 0), (1, 0), (2, 0), (3, 0), (4, 0)], views=views)
    levels = [[[0], [1, 2], [3, 4]], [[0, 1, 2], [3, 4]], [[0, 1, 2, 3, 4]]]
    h = hierarchy_from_levels("test", levels, layer)
    by_members = {tuple(r.members): r for r in h.regions.values()}
    assert np.array_equal(by_members[(0,)].embedding, views[0])
    assert np.array_equal(by_members[(1, 2)].embedding, [0.5, 1.0])

    def recursive(r):
        if r.level == 1:
            return np.mean([views[c] for c in r.children], axis=0)
        return np.mean([recursive(h.regions[c]) for c in r.children], axis=0)

    for r in h.regions.values():
        assert np.array_equal(r.embedding, recursive(r))
    top = h.level_regions(3)[0]
    assert not np.allclose(top.embedding, np.mean(views, axis=0))


def test_two_children_average():
    layer = make_layer([(0, 0), (1, 0)], views=[[1, 0], [0, 1]])
    h = hierarchy_from_levels("test", [[[0], [1]], [[0, 1]]], layer)
    assert np.array_equal(h.level_regions(2)[0].embedding, [0.5, 0.5])


def test_non_nested_levels_rejected():
    layer = make_layer([(0, 0), (1, 0), (2, 0)])
    with pytest.raises(ValueError):
        hierarchy_from_levels("test", [[[0, 1], [2]], [[0], [1, 2]]], layer)


# -- information bottleneck ----------------------------------------------------------------


def test_aib_examples():
    layer = make_layer([(0, 0), (1, 0), (5, 0), (6, 0)], views=[[1, 0.1], [1, 0], [0.1, 1], [0, 1]])
    tasks = [[1.0, 0.0], [0.0, 1.0]]
    assert aib_regions_baseline(layer, tasks, 4) == [[0], [1], [2], [3]]
    assert aib_regions_baseline(layer, tasks, 2) == [[0, 1], [2, 3]]
    assert aib_regions_baseline(layer, [[1.0, 0.0]], 1) == [[0, 1, 2, 3]]
    with pytest.raises(ValueError):
        aib_regions_baseline(layer, tasks, 5)


def test_aib_merge_cost_hand_trace():
    layer = make_layer([(0, 0), (1, 0), (5, 0), (6, 0)], views=[[1, 0.1], [1, 0], [0.1, 1], [0, 1]])
    cond = task_conditionals(layer, [[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(cond.sum(axis=1), 1.0)
    p = 0.25
    for i, j in itertools.combinations(range(4), 2):
        # Equal masses make the weighted divergence the plain Jensen-Shannon divergence.
        expected = 2 * p * jensenshannon(cond[i], cond[j]) ** 2
        assert abs(float(merge_cost(np.array([p]), np.array([p]), cond[i][None], cond[j][None])[0]) - expected) <= 1e-12
    cost = {(i, j): 2 * p * jensenshannon(cond[i], cond[j]) ** 2 for i, j in itertools.combinations(range(4), 2)}
    assert min(cost, key=cost.get) in {(0, 1), (2, 3)}
