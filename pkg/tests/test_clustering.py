import itertools

import numpy as np
import pytest

from curator.clustering import (
    GctParams,
    KMeansParams,
    build_gct,
    greedy_leaf,
    iter_nodes,
    kmeans,
    nearest_child,
    tree_height,
)
from curator.core import squared_l2

from helpers import make_tree


def _objective(points, groups):
    total = 0.0
    for g in groups:
        pts = points[list(g)].astype(np.float64)
        total += ((pts - pts.mean(axis=0)) ** 2).sum()
    return total


def test_square_corners_match_brute_force_best_partition():
    pts = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.float32)
    best = min(_objective(pts, (a, tuple(set(range(4)) - set(a))))
               for r in (1, 2) for a in itertools.combinations(range(4), r))
    res = kmeans(pts, KMeansParams(2, seed=0, n_init=10))
    assert res.objective == pytest.approx(best)
    mids = sorted(map(tuple, res.centroids.tolist()))
    assert mids in ([(0.0, 0.5), (1.0, 0.5)], [(0.5, 0.0), (0.5, 1.0)])


def test_restarts_keep_the_best_run():
    pts = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.float32)
    single = [kmeans(pts, KMeansParams(2, seed=s)).objective for s in range(8)]
    assert max(single) > min(single)  # plain Lloyd does get stuck on this input
    multi = kmeans(pts, KMeansParams(2, seed=0, n_init=8))
    assert multi.objective == pytest.approx(min(single))
    with pytest.raises(ValueError):
        KMeansParams(2, n_init=0)


def test_objective_never_increases_and_is_seed_deterministic():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(500, 5)).astype(np.float32)
    a = kmeans(pts, KMeansParams(7, max_iters=30, seed=11))
    b = kmeans(pts, KMeansParams(7, max_iters=30, seed=11))
    assert np.array_equal(a.centroids, b.centroids)
    assert np.array_equal(a.assignments, b.assignments)
    h = a.objective_history
    assert all(h[i + 1] <= h[i] * (1 + 1e-12) for i in range(len(h) - 1))
    assert len(a.centroids) == 7


def test_exactly_k_distinct_points_give_zero_objective():
    pts = np.array([[0, 0], [5, 5], [-3, 2]], dtype=np.float32)
    res = kmeans(pts, KMeansParams(3, seed=4))
    assert res.objective == 0.0
    assert sorted(map(tuple, res.centroids.tolist())) == sorted(map(tuple, pts.tolist()))


def test_duplicates_give_coincident_centroids():
    pts = np.ones((4, 3), dtype=np.float32)
    res = kmeans(pts, KMeansParams(4))
    assert res.centroids.shape == (4, 3)
    assert np.all(res.centroids == 1.0)
    assert sorted(np.bincount(res.assignments, minlength=4).tolist()) == [1, 1, 1, 1]


def test_assignments_are_nearest_centroid():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(300, 4)).astype(np.float32)
    res = kmeans(pts, KMeansParams(5, seed=2))
    for p, a in zip(pts, res.assignments):
        d = [squared_l2(p, c) for c in res.centroids]
        assert a == int(np.argmin(d))


def test_kmeans_errors():
    with pytest.raises(ValueError):
        kmeans(np.zeros((1, 2)), KMeansParams(2))
    with pytest.raises(ValueError):
        kmeans(np.zeros((0, 2)), KMeansParams(2))
    with pytest.raises(ValueError):
        KMeansParams(1)
    with pytest.raises(ValueError):
        GctParams(branching_factor=4, min_train_points_per_node=3)


def test_one_dimensional_fixed_point_tree():
    pts = np.array([[-1.0], [-0.9], [0.9], [1.0]], dtype=np.float32)
    root = build_gct(pts, GctParams(2, 1, 2))
    assert root.centroid.tolist() == [0.0]
    cents = sorted(float(c.centroid[0]) for c in root.children)
    assert cents == pytest.approx([-0.95, 0.95])
    near = nearest_child(root, np.array([0.5], np.float32))
    assert near.centroid[0] == pytest.approx(0.95)
    with pytest.raises(ValueError):
        nearest_child(root.children[0], np.array([0.5], np.float32))


def test_tie_goes_to_smaller_node_id():
    root = make_tree(([0.0], [([-1.0], []), ([1.0], [])]))
    assert nearest_child(root, np.array([0.0], np.float32)).node_id == 1
    flipped = make_tree(([0.0], [([1.0], []), ([-1.0], [])]))
    assert nearest_child(flipped, np.array([0.0], np.float32)).node_id == 1


def test_nearest_child_matches_linear_scan():
    rng = np.random.default_rng(6)
    root = build_gct(rng.normal(size=(400, 6)).astype(np.float32), GctParams(5, 2, 10))
    for _ in range(200):
        x = rng.normal(size=6).astype(np.float32)
        for node in iter_nodes(root):
            if node.children:
                d = [squared_l2(c.centroid, x) for c in node.children]
                assert nearest_child(node, x) is node.children[int(np.argmin(d))]


def test_height_bound_and_branching():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(300, 3)).astype(np.float32)
    root = build_gct(pts, GctParams(4, 1, 8))
    assert tree_height(root) == 1 and len(root.children) == 4
    deep = build_gct(pts, GctParams(3, 4, 12))
    assert tree_height(deep) <= 4
    for n in iter_nodes(deep):
        assert len(n.children) in (0, 3)
    for p in pts[:50]:
        assert greedy_leaf(deep, p).depth <= 4


def test_eight_gaussians_recovered_by_binary_tree():
    # cube corners with unequal edge lengths: each level has one best split
    rng = np.random.default_rng(8)
    sigma = 0.5
    means = np.array([[16 * a, 8 * b, 4 * c, 0.0]
                      for a in (-1, 1) for b in (-1, 1) for c in (-1, 1)])
    pts = np.concatenate([m + rng.normal(0, sigma, (200, 4)) for m in means]).astype(np.float32)
    root = build_gct(pts, GctParams(2, 3, 16, n_init=4))
    leaves = [n for n in iter_nodes(root) if not n.children]
    assert len(leaves) == 8
    matched = set()
    for leaf in leaves:
        d = np.sqrt(((means - leaf.centroid) ** 2).sum(axis=1))
        j = int(d.argmin())
        assert np.all(np.abs(means[j] - leaf.centroid) <= 3 * sigma)
        matched.add(j)
    assert len(matched) == 8


def test_build_is_deterministic():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(500, 4)).astype(np.float32)
    a, b = build_gct(pts, GctParams(3, 3, 10, seed=5)), build_gct(pts, GctParams(3, 3, 10, seed=5))
    na, nb = list(iter_nodes(a)), list(iter_nodes(b))
    assert [n.node_id for n in na] == [n.node_id for n in nb]
    assert all(np.array_equal(x.centroid, y.centroid) for x, y in zip(na, nb))
    assert [len(n.children) for n in na] == [len(n.children) for n in nb]


def test_build_rejects_small_training_set():
    with pytest.raises(ValueError):
        build_gct(np.zeros((5, 2), np.float32), GctParams(2, 2, 8))
    with pytest.raises(ValueError):
        build_gct(np.zeros((0, 2), np.float32), GctParams(2, 2, 2))
