"""Shared fixtures for the test-suite: hand-built trees, a reference model of
the access matrix, random operation streams and a rebuild oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from curator.baselines import (
    CuratorNoBFS,
    FlatIVFBloom,
    FlatIVFBloomShortlist,
    IvfParams,
    MetadataFilterIVF,
    PerTenantIVF,
)
from curator.clustering import GctParams, TreeNode, build_gct, finalize_tree
from curator.core import VectorStore
from curator.index import CuratorIndex, CuratorParams, SearchParams
from curator.oracle import exact_filtered_knn

VARIANTS = ("curator", "curator_no_bfs", "mf_ivf", "flat_ivf_bf", "flat_ivf_bf_sl", "pt_ivf")


def make_tree(spec) -> TreeNode:
    """``spec`` is ``(centroid, [child specs])``; ids come out breadth-first."""

    def build(s, depth, parent):
        centroid, kids = s
        node = TreeNode(np.asarray(centroid, dtype=np.float32), depth, parent)
        node.children = [build(k, depth + 1, node) for k in kids]
        return node

    root = build(spec, 0, None)
    finalize_tree(root)
    return root


def clone_tree(index: CuratorIndex) -> TreeNode:
    """Fresh copy of an index's tree shape and centroids, with no tenant state."""
    copies: list[TreeNode] = []
    for n in index.nodes:
        parent = copies[n.parent.node_id] if n.parent is not None else None
        c = TreeNode(n.centroid.copy(), n.depth, parent)
        if parent is not None:
            parent.children.append(c)
        copies.append(c)
    finalize_tree(copies[0])
    return copies[0]


@dataclass
class Model:
    """Ground-truth access matrix kept alongside an index under test."""

    dim: int
    vectors: dict[int, np.ndarray] = field(default_factory=dict)
    owner: dict[int, int] = field(default_factory=dict)
    access: dict[int, set[int]] = field(default_factory=dict)

    def store(self) -> VectorStore:
        s = VectorStore(self.dim)
        for lab in sorted(self.vectors):
            s.add(lab, self.vectors[lab], self.owner[lab]).access_list.update(self.access[lab])
        return s

    def accessible(self, tenant: int) -> set[int]:
        return {lab for lab, ts in self.access.items() if tenant in ts}


def random_vectors(rng: np.random.Generator, n: int, dim: int, n_centers: int = 8) -> np.ndarray:
    centers = rng.normal(0.0, 1.0, (n_centers, dim))
    comp = rng.integers(n_centers, size=n)
    return (centers[comp] + rng.normal(0.0, 0.25, (n, dim))).astype(np.float32)


def small_params(cap: int = 4, bits: int = 64, hashes: int = 2, branching: int = 3,
                 depth: int = 3, min_pts: int = 6, batching: bool = False, seed: int = 0
                 ) -> CuratorParams:
    return CuratorParams(GctParams(branching, depth, min_pts, seed), max_shortlist_size=cap,
                         bloom_bits_per_node=bits, bloom_hash_count=hashes,
                         bloom_update_batching=batching, bloom_batch_size=3)


def build_variant(kind: str, training: np.ndarray, *, curator_params: CuratorParams | None = None,
                  n_clusters: int = 8, seed: int = 0):
    if kind in ("curator", "curator_no_bfs"):
        cls = CuratorIndex if kind == "curator" else CuratorNoBFS
        return cls(build_gct(training, (curator_params or small_params()).gct),
                   curator_params or small_params())
    ivf = IvfParams(n_clusters=n_clusters, nprobe=1)
    if kind == "mf_ivf":
        return MetadataFilterIVF.train(training, ivf, seed)
    if kind == "flat_ivf_bf":
        return FlatIVFBloom.train(training, ivf, seed, bloom_bits=64, bloom_hashes=2)
    if kind == "flat_ivf_bf_sl":
        return FlatIVFBloomShortlist.train(training, ivf, seed, bloom_bits=64, bloom_hashes=2)
    if kind == "pt_ivf":
        # shared centroids per tenant keep the test independent of per-tenant training
        pt = PerTenantIVF(training.shape[1], ivf)
        pt._centroids = MetadataFilterIVF.train(training, ivf, seed).cells.centroids
        return pt
    raise ValueError(kind)


def _ensure_tenant(index, tenant: int) -> None:
    if isinstance(index, PerTenantIVF) and tenant not in index.indexes:
        index.create_tenant_index(tenant, centroids=index._centroids)


def search(index, kind: str, x, tenant: int, k: int, *, exhaustive: bool = False,
           gamma1: int = 1, gamma2: int = 1, nprobe: int = 1, n_total: int = 0, stats=None):
    if kind in ("curator", "curator_no_bfs"):
        if exhaustive:
            gamma1, gamma2 = max(1, -(-n_total // k)), 1
        return index.knn_search(x, tenant, SearchParams(k, gamma1, gamma2), stats=stats)
    if exhaustive:
        nprobe = 10**9 if kind == "pt_ivf" else len(index.cells)
    return index.search(x, tenant, k, nprobe, stats)


class Driver:
    """Applies random operations to an index and mirrors them in a :class:`Model`.

    ``step`` returns the name of the operation performed so callers can hook
    checks onto specific kinds (e.g. after every revoke).
    """

    def __init__(self, index, dim: int, n_tenants: int, rng: np.random.Generator,
                 pool: np.ndarray | None = None) -> None:
        self.index = index
        self.model = Model(dim)
        self.n_tenants = n_tenants
        self.rng = rng
        self.pool = pool if pool is not None else random_vectors(rng, 4096, dim)
        self.next_label = 0

    def insert(self, owner: int | None = None) -> int:
        rng, m = self.rng, self.model
        lab = self.next_label
        self.next_label += 1 + int(rng.integers(3))  # gaps keep labels non-contiguous
        owner = int(rng.integers(self.n_tenants)) if owner is None else owner
        x = self.pool[int(rng.integers(len(self.pool)))]
        if rng.random() < 0.2:
            x = x + rng.normal(0.0, 0.01, x.shape).astype(np.float32)
        _ensure_tenant(self.index, owner)
        self.index.insert_vector(x, lab, owner)
        m.vectors[lab], m.owner[lab], m.access[lab] = np.asarray(x, np.float32), owner, {owner}
        return lab

    def grant(self) -> bool:
        m = self.model
        if not m.vectors:
            return False
        lab = self._pick()
        free = [t for t in range(self.n_tenants) if t not in m.access[lab]]
        if not free:
            return False
        t = free[int(self.rng.integers(len(free)))]
        _ensure_tenant(self.index, t)
        self.index.grant_access(lab, t)
        m.access[lab].add(t)
        return True

    def revoke(self) -> bool:
        m = self.model
        shared = [lab for lab, ts in m.access.items() if len(ts) > 1]
        if not shared:
            return False
        lab = shared[int(self.rng.integers(len(shared)))]
        others = sorted(m.access[lab] - {m.owner[lab]})
        t = others[int(self.rng.integers(len(others)))]
        self.index.revoke_access(lab, t)
        m.access[lab].discard(t)
        return True

    def delete(self) -> bool:
        m = self.model
        if not m.vectors:
            return False
        lab = self._pick()
        self.index.delete_vector(lab)
        del m.vectors[lab], m.owner[lab], m.access[lab]
        return True

    def _pick(self) -> int:
        labs = list(self.model.vectors)
        return labs[int(self.rng.integers(len(labs)))]

    def step(self, weights=(0.35, 0.35, 0.2, 0.1)) -> str:
        """One random operation among insert/grant/revoke/delete."""
        while True:
            op = ("insert", "grant", "revoke", "delete")[int(self.rng.choice(4, p=weights))]
            if op == "insert":
                self.insert()
                return op
            if getattr(self, op)():
                return op

    def populate(self, n: int, grants: int) -> None:
        for _ in range(n):
            self.insert()
        for _ in range(grants):
            self.grant()


def rebuild(index: CuratorIndex, model: Model, cls=CuratorIndex) -> CuratorIndex:
    """Same tree, tenant state replayed from the final access matrix."""
    fresh = cls(clone_tree(index), index.params)
    for lab in sorted(model.vectors):
        fresh.insert_vector(model.vectors[lab], lab, model.owner[lab])
        for t in sorted(model.access[lab] - {model.owner[lab]}):
            fresh.grant_access(lab, t)
    return fresh


def oracle(model: Model, x, tenant: int, k: int):
    return exact_filtered_knn(model.store(), x, tenant, k)


def random_index(seed: int, kind: str, n_ops: int = 400, dim: int = 8, n_tenants: int = 6,
                 cap: int = 4):
    """A trained index of ``kind`` after a random mix of mutations, plus its driver."""
    rng = np.random.default_rng(seed)
    pool = random_vectors(rng, 2048, dim)
    index = build_variant(kind, pool[:512], curator_params=small_params(cap=cap, seed=seed),
                          seed=seed)
    drv = Driver(index, dim, n_tenants, rng, pool)
    drv.populate(n_ops // 2, n_ops // 4)
    for _ in range(n_ops // 2):
        drv.step()
    return drv
