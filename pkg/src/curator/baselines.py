"""Reference multi-tenancy strategies built on the same core.

* :class:`MetadataFilterIVF` -- one shared IVF index; every scanned vector's
  access list is checked against the querying tenant (single-stage filtering).
* :class:`PerTenantIVF` -- a private IVF index per tenant holding its own copy
  of every vector the tenant can access.
* :class:`FlatIVFBloom`, :class:`FlatIVFBloomShortlist`,
  :class:`CuratorNoBFS` -- the ablation ladder between the two designs.

All of them share the result contract of the exact oracle: ``(label,
distance)`` pairs sorted by distance, ties by label.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bloom import TenantBloomFilter
from .clustering import KMeansParams, kmeans
from .core import (
    FLOAT_BYTES,
    LABEL_BYTES,
    TENANT_BYTES,
    AccessError,
    DuplicateLabel,
    Label,
    TenantId,
    UnknownLabel,
    VectorRecord,
    VectorStore,
    as_vector,
    check_label,
    check_tenant,
    squared_l2_rows,
    top_k_arrays,
)
from .index import CuratorIndex, SearchParams, SearchStats


@dataclass(frozen=True)
class IvfParams:
    n_clusters: int = 256
    nprobe: int = 8
    kmeans: KMeansParams | None = None
    # cap on k-means training points per centroid
    max_points_per_centroid: int = 64

    def __post_init__(self) -> None:
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if not 1 <= self.nprobe <= self.n_clusters:
            raise ValueError("nprobe must lie in [1, n_clusters]")


@dataclass(frozen=True)
class IvfSearchParams:
    k: int = 10
    nprobe: int = 8


@dataclass
class IvfSearchStats:
    clusters_scanned: int = 0
    cells_skipped: int = 0
    predicate_evals: int = 0
    vectors_scanned: int = 0


def train_centroids(training: np.ndarray, n_clusters: int, params: IvfParams,
                    seed: int = 0) -> np.ndarray:
    training = np.asarray(training, dtype=np.float32)
    if len(training) == 0:
        raise ValueError("cannot train on an empty set")
    if n_clusters <= 1 or len(training) < n_clusters:
        return training.astype(np.float64).mean(axis=0, keepdims=True).astype(np.float32)
    cap = n_clusters * params.max_points_per_centroid
    if len(training) > cap:
        rng = np.random.default_rng(seed)
        training = training[np.sort(rng.choice(len(training), cap, replace=False))]
    km = params.kmeans or KMeansParams(n_clusters, 20, seed)
    if km.n_clusters != n_clusters:
        km = KMeansParams(n_clusters, km.max_iters, km.seed, km.n_init)
    return kmeans(training, km).centroids


class _Cells:
    """Centroids plus nearest-centroid probing, shared by every IVF flavour."""

    def __init__(self, centroids: np.ndarray) -> None:
        self.centroids = np.asarray(centroids, dtype=np.float32)
        self._c64 = self.centroids.astype(np.float64)
        self._cn = (self._c64 * self._c64).sum(axis=1)
        self._ids = np.arange(len(self.centroids))

    def __len__(self) -> int:
        return len(self.centroids)

    def distances(self, x: np.ndarray) -> np.ndarray:
        return self._cn - 2.0 * (self._c64 @ x.astype(np.float64))

    def nearest(self, x: np.ndarray) -> int:
        return int(self.distances(x).argmin())

    def probe(self, x: np.ndarray, nprobe: int) -> list[int]:
        d = self.distances(x)
        nprobe = min(nprobe, len(d))
        if nprobe < len(d):
            part = np.argpartition(d, nprobe - 1)[:nprobe]
            return part[np.lexsort((part, d[part]))].tolist()
        return np.lexsort((self._ids, d)).tolist()


class MetadataFilterIVF:
    """Shared IVF-Flat index with per-vector access-list predicates."""

    def __init__(self, centroids: np.ndarray, params: IvfParams | None = None) -> None:
        self.params = params or IvfParams(n_clusters=len(centroids),
                                          nprobe=min(8, len(centroids)))
        self.cells = _Cells(centroids)
        self.dim = self.cells.centroids.shape[1]
        self.store = VectorStore(self.dim)
        n = len(self.cells)
        self.plabels: list[list[Label]] = [[] for _ in range(n)]
        self.paccess: list[list[set[TenantId]]] = [[] for _ in range(n)]

    @classmethod
    def train(cls, training: np.ndarray, params: IvfParams, seed: int = 0):
        return cls(train_centroids(training, params.n_clusters, params, seed), params)

    def __len__(self) -> int:
        return len(self.store)

    # -- access predicates

    def get_vector(self, label: Label) -> VectorRecord:
        return self.store.get(label).snapshot()

    def has_access(self, label: Label, tenant: TenantId) -> bool:
        rec = self.store.records.get(label)
        return rec is not None and tenant in rec.access_list

    def has_ownership(self, label: Label, tenant: TenantId) -> bool:
        rec = self.store.records.get(label)
        return rec is not None and rec.owner == tenant

    # -- mutation

    def insert_vector(self, x, label: Label, owner: TenantId) -> None:
        label, owner = check_label(label), check_tenant(owner)
        x = as_vector(x, self.dim)
        if label in self.store:
            raise DuplicateLabel(f"label {label} already present")
        c = self.cells.nearest(x)
        rec = self.store.add(label, x, owner)
        rec.assigned_leaf = c
        self.plabels[c].append(label)
        self.paccess[c].append(rec.access_list)
        self._on_grant(c, label, owner)

    def grant_access(self, label: Label, tenant: TenantId) -> None:
        tenant = check_tenant(tenant)
        rec = self.store.get(label)
        if tenant in rec.access_list:
            raise AccessError(f"tenant {tenant} already has access to {label}")
        rec.access_list.add(tenant)
        self._on_grant(rec.assigned_leaf, label, tenant)

    def revoke_access(self, label: Label, tenant: TenantId) -> None:
        rec = self.store.get(label)
        if tenant not in rec.access_list:
            raise AccessError(f"tenant {tenant} has no access to {label}")
        if tenant == rec.owner:
            raise AccessError(f"cannot revoke owner {tenant} of {label}")
        rec.access_list.remove(tenant)
        self._on_revoke(rec.assigned_leaf, label, tenant)

    def delete_vector(self, label: Label) -> None:
        rec = self.store.get(label)
        c = rec.assigned_leaf
        for t in sorted(rec.access_list):
            self._on_revoke(c, label, t)
        i = self.plabels[c].index(label)
        del self.plabels[c][i]
        del self.paccess[c][i]
        self.store.remove(label)

    def _on_grant(self, cell: int, label: Label, tenant: TenantId) -> None:
        pass

    def _on_revoke(self, cell: int, label: Label, tenant: TenantId) -> None:
        pass

    # -- search

    def _scan_cell(self, c: int, tenant: TenantId, stats: IvfSearchStats | None) -> list[Label]:
        labs = self.plabels[c]
        if stats is not None:
            stats.predicate_evals += len(labs)
        return [lab for lab, acc in zip(labs, self.paccess[c]) if tenant in acc]

    def search(self, x, tenant: TenantId, k: int, nprobe: int | None = None,
               stats: IvfSearchStats | None = None) -> list[tuple[Label, float]]:
        x = as_vector(x, self.dim)
        nprobe = nprobe or self.params.nprobe
        found: list[Label] = []
        for c in self.cells.probe(x, nprobe):
            labs = self._scan_cell(c, tenant, stats)
            if stats is not None:
                stats.clusters_scanned += labs is not None
            if labs:
                found.extend(labs)
        if stats is not None:
            stats.vectors_scanned += len(found)
        if not found:
            return []
        return top_k_arrays(np.array(found, dtype=np.uint64), self.store.distances(found, x), k)

    def knn_search(self, x, tenant: TenantId, sp: IvfSearchParams, stats=None):
        return self.search(x, tenant, sp.k, sp.nprobe, stats)

    mf_ivf_search = search

    # -- accounting

    def memory_usage(self) -> dict[str, int]:
        usage = {
            "vector_data": self.store.vector_bytes(),
            "centroids": self.cells.centroids.size * FLOAT_BYTES,
            "posting_lists": len(self.store) * LABEL_BYTES,
            "access_lists": self.store.access_list_bytes(),
        }
        usage.update(self._extra_memory())
        usage["total"] = sum(usage.values())
        return usage

    def _extra_memory(self) -> dict[str, int]:
        return {}


class FlatIVFBloom(MetadataFilterIVF):
    """MF-IVF whose cells carry a Bloom filter of the tenants present.

    Cells whose filter rejects the tenant are skipped; the rest are scanned with
    the access-list predicate exactly as in :class:`MetadataFilterIVF`, so both
    return identical results for the same ``nprobe``.
    """

    def __init__(self, centroids, params=None, bloom_bits: int = 1024, bloom_hashes: int = 4):
        super().__init__(centroids, params)
        self.blooms = [TenantBloomFilter(bloom_bits, bloom_hashes) for _ in range(len(self.cells))]
        self.cell_counts: list[Counter] = [Counter() for _ in range(len(self.cells))]

    @classmethod
    def train(cls, training, params: IvfParams, seed: int = 0, **kw):
        return cls(train_centroids(training, params.n_clusters, params, seed), params, **kw)

    def _on_grant(self, cell, label, tenant):
        self.cell_counts[cell][tenant] += 1
        self.blooms[cell].add(tenant)

    def _on_revoke(self, cell, label, tenant):
        counts = self.cell_counts[cell]
        counts[tenant] -= 1
        if counts[tenant] == 0:
            del counts[tenant]
            bf = self.blooms[cell]
            bf.clear()
            for t in counts:
                bf.add(t)

    def _scan_cell(self, c, tenant, stats):
        if tenant not in self.blooms[c]:
            if stats is not None:
                stats.cells_skipped += 1
            return None
        return super()._scan_cell(c, tenant, stats)

    def _extra_memory(self):
        return {
            "bloom_filters": sum(b.nbytes for b in self.blooms),
            "cell_counts": sum(len(c) for c in self.cell_counts) * 2 * TENANT_BYTES,
        }


class FlatIVFBloomShortlist(FlatIVFBloom):
    """Flat IVF with Bloom filters and per-cell, per-tenant shortlists.

    Search reads only the tenant's shortlist in each probed cell and never
    touches an access list.
    """

    def __init__(self, centroids, params=None, bloom_bits: int = 1024, bloom_hashes: int = 4):
        super().__init__(centroids, params, bloom_bits, bloom_hashes)
        self.shortlists: list[dict[TenantId, list[Label]]] = [{} for _ in range(len(self.cells))]

    def _on_grant(self, cell, label, tenant):
        self.shortlists[cell].setdefault(tenant, []).append(label)
        self.blooms[cell].add(tenant)

    def _on_revoke(self, cell, label, tenant):
        sls = self.shortlists[cell]
        sl = sls[tenant]
        sl.remove(label)
        if not sl:
            del sls[tenant]
            bf = self.blooms[cell]
            bf.clear()
            for t in sls:
                bf.add(t)

    def _scan_cell(self, c, tenant, stats):
        if tenant not in self.blooms[c]:
            if stats is not None:
                stats.cells_skipped += 1
            return None
        return self.shortlists[c].get(tenant)

    def _extra_memory(self):
        n_sl = sum(len(s) for s in self.shortlists)
        n_entries = sum(len(sl) for s in self.shortlists for sl in s.values())
        return {
            "bloom_filters": sum(b.nbytes for b in self.blooms),
            "shortlists": n_entries * LABEL_BYTES + n_sl * 2 * TENANT_BYTES,
        }


class CuratorNoBFS(CuratorIndex):
    """Curator whose first search stage enumerates the whole tenant tree."""

    def knn_search(self, x, tenant, sp: SearchParams, *, best_first: bool = False, **kw):
        return super().knn_search(x, tenant, sp, best_first=best_first, **kw)


# ------------------------------------------------------------- per tenant

class _TenantIvf:
    __slots__ = ("cells", "store", "plists")

    def __init__(self, centroids: np.ndarray, dim: int) -> None:
        self.cells = _Cells(centroids)
        self.store = VectorStore(dim, capacity=64)
        self.plists: list[list[Label]] = [[] for _ in range(len(self.cells))]

    def add(self, label: Label, x: np.ndarray) -> None:
        c = self.cells.nearest(x)
        rec = self.store.add(label, x, 0)
        rec.assigned_leaf = c
        self.plists[c].append(label)

    def remove(self, label: Label) -> None:
        rec = self.store.remove(label)
        self.plists[rec.assigned_leaf].remove(label)


class PerTenantIVF:
    """One private IVF-Flat index per tenant; shared vectors are duplicated.

    Each tenant index is trained on that tenant's own vectors (see
    :meth:`create_tenant_index`). A tenant first seen through an insert or
    grant without prior training gets a single-cell index.
    """

    def __init__(self, dim: int, params: IvfParams | None = None,
                 min_points_per_cluster: int = 32) -> None:
        self.dim = dim
        self.params = params or IvfParams()
        self.min_points_per_cluster = min_points_per_cluster
        self.indexes: dict[TenantId, _TenantIvf] = {}
        self.access: dict[Label, tuple[TenantId, set[TenantId]]] = {}

    def n_clusters_for(self, n_vectors: int) -> int:
        return max(1, min(self.params.n_clusters, n_vectors // self.min_points_per_cluster))

    def create_tenant_index(self, tenant: TenantId, training: np.ndarray | None = None,
                            seed: int = 0, centroids: np.ndarray | None = None) -> None:
        tenant = check_tenant(tenant)
        if tenant in self.indexes:
            raise ValueError(f"tenant {tenant} already has an index")
        if centroids is not None:
            centroids = np.asarray(centroids, dtype=np.float32)
        elif training is None or len(training) == 0:
            centroids = np.zeros((1, self.dim), dtype=np.float32)
        else:
            training = np.asarray(training, dtype=np.float32)
            centroids = train_centroids(training, self.n_clusters_for(len(training)),
                                        self.params, seed + tenant)
        self.indexes[tenant] = _TenantIvf(centroids, self.dim)

    def _index(self, tenant: TenantId) -> _TenantIvf:
        if tenant not in self.indexes:
            self.create_tenant_index(tenant)
        return self.indexes[tenant]

    def __len__(self) -> int:
        return len(self.access)

    def has_access(self, label: Label, tenant: TenantId) -> bool:
        entry = self.access.get(label)
        return entry is not None and tenant in entry[1]

    def has_ownership(self, label: Label, tenant: TenantId) -> bool:
        entry = self.access.get(label)
        return entry is not None and entry[0] == tenant

    def get_vector(self, label: Label) -> np.ndarray:
        owner, _ = self._entry(label)
        return self.indexes[owner].store.get(label).data.copy()

    def _entry(self, label: Label):
        try:
            return self.access[label]
        except KeyError:
            raise UnknownLabel(f"unknown label {label}") from None

    def insert_vector(self, x, label: Label, owner: TenantId) -> None:
        label, owner = check_label(label), check_tenant(owner)
        x = as_vector(x, self.dim)
        if label in self.access:
            raise DuplicateLabel(f"label {label} already present")
        self.access[label] = (owner, {owner})
        self._index(owner).add(label, x)

    def grant_access(self, label: Label, tenant: TenantId) -> None:
        tenant = check_tenant(tenant)
        owner, tenants = self._entry(label)
        if tenant in tenants:
            raise AccessError(f"tenant {tenant} already has access to {label}")
        x = self.indexes[owner].store.get(label).data
        tenants.add(tenant)
        self._index(tenant).add(label, x)

    def revoke_access(self, label: Label, tenant: TenantId) -> None:
        owner, tenants = self._entry(label)
        if tenant not in tenants:
            raise AccessError(f"tenant {tenant} has no access to {label}")
        if tenant == owner:
            raise AccessError(f"cannot revoke owner {tenant} of {label}")
        tenants.remove(tenant)
        self.indexes[tenant].remove(label)

    def delete_vector(self, label: Label) -> None:
        _, tenants = self._entry(label)
        for t in sorted(tenants):
            self.indexes[t].remove(label)
        del self.access[label]

    def search(self, x, tenant: TenantId, k: int, nprobe: int | None = None,
               stats: IvfSearchStats | None = None) -> list[tuple[Label, float]]:
        x = as_vector(x, self.dim)
        idx = self.indexes.get(tenant)
        if idx is None:
            return []
        found: list[Label] = []
        for c in idx.cells.probe(x, nprobe or self.params.nprobe):
            found.extend(idx.plists[c])
        if stats is not None:
            stats.vectors_scanned += len(found)
        if not found:
            return []
        return top_k_arrays(np.array(found, dtype=np.uint64), idx.store.distances(found, x), k)

    def knn_search(self, x, tenant: TenantId, sp: IvfSearchParams, stats=None):
        return self.search(x, tenant, sp.k, sp.nprobe, stats)

    pt_ivf_search = search

    def memory_usage(self) -> dict[str, int]:
        n_copies = sum(len(i.store) for i in self.indexes.values())
        usage = {
            "vector_data": n_copies * self.dim * FLOAT_BYTES,
            "centroids": sum(i.cells.centroids.size for i in self.indexes.values()) * FLOAT_BYTES,
            "posting_lists": n_copies * LABEL_BYTES,
            "access_lists": sum(TENANT_BYTES * (1 + len(t)) for _, t in self.access.values()),
        }
        usage["total"] = sum(usage.values())
        return usage
