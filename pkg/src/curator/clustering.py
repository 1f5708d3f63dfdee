"""k-means and the shared hierarchical clustering tree.

The tree is built once from a training sample by recursive k-means and its
shape never changes afterwards; per-tenant state hangs off the nodes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bloom import TenantBloomFilter
from .core import squared_l2_rows


@dataclass(frozen=True)
class KMeansParams:
    n_clusters: int
    max_iters: int = 20
    seed: int = 0
    # independent seedings; the run with the lowest final objective wins
    n_init: int = 1

    def __post_init__(self) -> None:
        if self.n_clusters < 2:
            raise ValueError("n_clusters must be >= 2")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")


@dataclass(frozen=True)
class GctParams:
    branching_factor: int = 8
    max_depth: int = 8
    min_train_points_per_node: int = 64
    seed: int = 0
    max_iters: int = 20
    n_init: int = 1

    def __post_init__(self) -> None:
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.branching_factor < 2:
            raise ValueError("branching_factor must be >= 2")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_train_points_per_node < self.branching_factor:
            raise ValueError("min_train_points_per_node must be >= branching_factor")


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    objective_history: list[float] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_history[-1]


_EXACT_MAX_K = 16


def _pairwise_sq(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    if centroids.shape[0] <= _EXACT_MAX_K:
        # same arithmetic as routing, so tree partitions agree with nearest_child
        return np.stack([squared_l2_rows(points, c) for c in centroids], axis=1)
    c64 = centroids.astype(np.float64)
    cn = (c64 * c64).sum(axis=1)
    out = np.empty((points.shape[0], c64.shape[0]))
    for s in range(0, points.shape[0], 4096):
        p = points[s:s + 4096].astype(np.float64)
        d = (p * p).sum(axis=1)[:, None] - 2.0 * (p @ c64.T) + cn[None, :]
        out[s:s + 4096] = np.maximum(d, 0.0)
    return out


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    idx = [int(rng.integers(n))]
    closest = squared_l2_rows(points, points[idx[0]])
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining mass is on existing centers: duplicates allowed
            nxt = int(rng.integers(n))
        else:
            nxt = int(rng.choice(n, p=closest / total))
        idx.append(nxt)
        np.minimum(closest, squared_l2_rows(points, points[nxt]), out=closest)
    return points[idx].astype(np.float64)


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = _pairwise_sq(points, centroids)
    a = d.argmin(axis=1)  # first minimum == smallest cluster index on ties
    return a, d[np.arange(len(points)), a]


def _repair_empty(assign: np.ndarray, dist: np.ndarray, centroids: np.ndarray,
                  points: np.ndarray) -> None:
    """Give every empty cluster the point farthest from its own centroid."""
    k = centroids.shape[0]
    counts = np.bincount(assign, minlength=k)
    for c in np.flatnonzero(counts == 0):
        movable = counts[assign] > 1
        cand = np.where(movable, dist, -1.0)
        p = int(np.argmax(cand))  # ties -> lowest point index
        counts[assign[p]] -= 1
        assign[p] = c
        counts[c] = 1
        dist[p] = 0.0
        centroids[c] = points[p]


def kmeans(points: Sequence | np.ndarray, params: KMeansParams) -> KMeansResult:
    """Lloyd's k-means with k-means++ seeding.

    Returns exactly ``n_clusters`` centroids. Empty clusters are refilled with
    the farthest point; coincident centroids are allowed when the input has
    fewer distinct points than clusters. Final assignments are nearest-centroid
    with ties going to the lower cluster index. With ``n_init > 1`` the run
    with the lowest objective is kept (earliest run on ties).
    """
    pts = np.asarray(points, dtype=np.float32)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("kmeans needs a non-empty 2-D point array")
    k = params.n_clusters
    if pts.shape[0] < k:
        raise ValueError(f"need at least {k} points, got {pts.shape[0]}")
    p64 = pts.astype(np.float64)
    if params.n_init == 1:
        return _lloyd(pts, p64, params, np.random.default_rng(params.seed))
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(params.seed).spawn(params.n_init)]
    runs = [_lloyd(pts, p64, params, rng) for rng in rngs]
    return min(runs, key=lambda r: r.objective)


def _lloyd(pts: np.ndarray, p64: np.ndarray, params: KMeansParams,
           rng: np.random.Generator) -> KMeansResult:
    k = params.n_clusters
    centroids = _kmeanspp(pts, k, rng)
    assign, dist = _assign(pts, centroids)
    _repair_empty(assign, dist, centroids, p64)
    history = [float(dist.sum())]
    for _ in range(params.max_iters):
        for c in range(k):
            members = p64[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
        new_assign, dist = _assign(pts, centroids)
        _repair_empty(new_assign, dist, centroids, p64)
        history.append(float(dist.sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return KMeansResult(centroids.astype(np.float32), assign, history)


class TreeNode:
    """A node of the global clustering tree.

    ``shortlists`` maps tenant -> list of labels (the tenant's shortlist at this
    node); ``bucket`` holds labels whose greedy leaf is this node and is only
    populated at leaves. ``path`` is the root-to-self node tuple.
    """

    __slots__ = ("node_id", "centroid", "children", "parent", "depth", "bloom",
                 "shortlists", "bucket", "path", "child_centroids", "pending")

    def __init__(self, centroid: np.ndarray, depth: int, parent: "TreeNode | None" = None):
        self.node_id = -1
        self.centroid = np.asarray(centroid, dtype=np.float32)
        self.children: list[TreeNode] = []
        self.parent = parent
        self.depth = depth
        self.bloom = TenantBloomFilter()
        self.shortlists: dict[int, list[int]] = {}
        self.bucket: set[int] = set()
        self.path: tuple[TreeNode, ...] = ()
        self.child_centroids: np.ndarray | None = None
        self.pending = 0

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def __repr__(self) -> str:
        return f"TreeNode(id={self.node_id}, depth={self.depth}, children={len(self.children)})"


def build_gct(training_set: Sequence | np.ndarray, params: GctParams) -> TreeNode:
    """Train the clustering tree by recursive k-means.

    Node ids are assigned breadth-first, so siblings carry consecutive ids in
    child order and the root is 0.
    """
    pts = np.asarray(training_set, dtype=np.float32)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("training set must be a non-empty 2-D array")
    if pts.shape[0] < params.min_train_points_per_node:
        raise ValueError(
            f"training set has {pts.shape[0]} points, need >= {params.min_train_points_per_node}"
        )
    root = TreeNode(pts.astype(np.float64).mean(axis=0), depth=0)
    stack = [(root, np.arange(pts.shape[0]))]
    n_trained = 0
    while stack:
        node, idx = stack.pop()
        if node.depth >= params.max_depth or len(idx) < params.min_train_points_per_node:
            continue
        km = kmeans(pts[idx], KMeansParams(params.branching_factor, params.max_iters,
                                           params.seed + n_trained, params.n_init))
        n_trained += 1
        for c in range(params.branching_factor):
            child = TreeNode(km.centroids[c], node.depth + 1, node)
            node.children.append(child)
            stack.append((child, idx[km.assignments == c]))
    finalize_tree(root)
    return root


def finalize_tree(root: TreeNode) -> list[TreeNode]:
    """Assign BFS node ids and cache paths / child centroid matrices."""
    order: list[TreeNode] = []
    q = deque([root])
    while q:
        n = q.popleft()
        n.node_id = len(order)
        order.append(n)
        n.path = (n.parent.path if n.parent else ()) + (n,)
        if n.children:
            n.child_centroids = np.stack([c.centroid for c in n.children])
        q.extend(n.children)
    return order


def nearest_child(node: TreeNode, x: np.ndarray) -> TreeNode:
    """Child whose centroid is closest to ``x``; ties go to the smaller node id."""
    if not node.children:
        raise ValueError(f"node {node.node_id} is a leaf")
    d = squared_l2_rows(node.child_centroids, x)
    return node.children[int(d.argmin())]


def greedy_leaf(root: TreeNode, x: np.ndarray) -> TreeNode:
    node = root
    while node.children:
        node = nearest_child(node, x)
    return node


def iter_nodes(root: TreeNode):
    q = deque([root])
    while q:
        n = q.popleft()
        yield n
        q.extend(n.children)


def tree_height(root: TreeNode) -> int:
    return max(n.depth for n in iter_nodes(root))
