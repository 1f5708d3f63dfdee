"""Multi-tenant ANN index: per-tenant clustering trees on one shared tree.

Each tenant's tree is never stored explicitly. A node belongs to it when the
node's Bloom filter admits the tenant; the tenant's leaves are the nodes that
hold a shortlist of its labels. Vector data lives once in the shared store.
"""

from __future__ import annotations

import heapq
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bloom import TenantBloomFilter, tenant_mask
from .clustering import GctParams, TreeNode, build_gct, finalize_tree
from .core import (
    FLOAT_BYTES,
    LABEL_BYTES,
    TENANT_BYTES,
    AccessError,
    DimensionMismatch,
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

CHUNK_SIZE = 16


@dataclass(frozen=True)
class CuratorParams:
    gct: GctParams = field(default_factory=GctParams)
    max_shortlist_size: int = 32
    bloom_bits_per_node: int = 1024
    bloom_hash_count: int = 4
    bloom_update_batching: bool = False
    # pending refreshes a node accumulates before recomputing in batched mode
    bloom_batch_size: int = 8

    def __post_init__(self) -> None:
        if self.max_shortlist_size < 1:
            raise ValueError("max_shortlist_size must be >= 1")
        if self.bloom_bits_per_node < 1 or self.bloom_hash_count < 1:
            raise ValueError("Bloom filter geometry must be positive")
        if self.bloom_batch_size < 1:
            raise ValueError("bloom_batch_size must be >= 1")


@dataclass(frozen=True)
class SearchParams:
    k: int = 10
    gamma1: int = 2
    gamma2: int = 4

    def __post_init__(self) -> None:
        if self.k < 1 or self.gamma1 < 1 or self.gamma2 < 1:
            raise ValueError("k, gamma1 and gamma2 must all be >= 1")


@dataclass
class SearchStats:
    nodes_visited: int = 0
    clusters_scanned: int = 0
    vectors_scanned: int = 0
    candidate_clusters: int = 0


class CuratorIndex:
    def __init__(self, root: TreeNode, params: CuratorParams) -> None:
        self.root = root
        self.params = params
        self.nodes: list[TreeNode] = finalize_tree(root)
        self.dim = int(root.centroid.shape[0])
        self.store = VectorStore(self.dim)
        nb, nh = params.bloom_bits_per_node, params.bloom_hash_count
        for n in self.nodes:
            if (n.bloom.n_bits, n.bloom.n_hashes) != (nb, nh):
                n.bloom = TenantBloomFilter(nb, nh)
        # per internal node: float64 child centroids and their squared norms,
        # so ranking children costs one matrix-vector product
        self._child_f64 = {}
        for n in self.nodes:
            if n.children:
                c64 = n.child_centroids.astype(np.float64)
                self._child_f64[n.node_id] = (c64, (c64 * c64).sum(axis=1))

    # ------------------------------------------------------------------ build

    @classmethod
    def train(cls, training_vectors: Sequence | np.ndarray, params: CuratorParams | None = None
              ) -> "CuratorIndex":
        params = params or CuratorParams()
        return cls(build_gct(training_vectors, params.gct), params)

    # ------------------------------------------------------------- predicates

    def __len__(self) -> int:
        return len(self.store)

    def get_vector(self, label: Label) -> VectorRecord:
        return self.store.get(label).snapshot()

    def has_access(self, label: Label, tenant: TenantId) -> bool:
        rec = self.store.records.get(label)
        return rec is not None and tenant in rec.access_list

    def has_ownership(self, label: Label, tenant: TenantId) -> bool:
        rec = self.store.records.get(label)
        return rec is not None and rec.owner == tenant

    def _mask(self, tenant: TenantId) -> int:
        return tenant_mask(tenant, self.params.bloom_bits_per_node, self.params.bloom_hash_count)

    def _subtree_has(self, node: TreeNode, tenant: TenantId, mask: int) -> bool:
        """Exact test: does any shortlist for ``tenant`` exist under ``node``?

        Bloom filters only prune, so stale or colliding bits cannot fool it.
        """
        stack = [node]
        while stack:
            n = stack.pop()
            if tenant in n.shortlists:
                return True
            if n.bloom.bits & mask == mask:
                stack.extend(n.children)
        return False

    # --------------------------------------------------------------- mutation

    def insert_vector(self, x: Sequence[float] | np.ndarray, label: Label, owner: TenantId) -> None:
        label = check_label(label)
        owner = check_tenant(owner)
        x = as_vector(x, self.dim)
        if label in self.store:
            raise DuplicateLabel(f"label {label} already present")
        leaf = self._descend(x)
        rec = self.store.add(label, x, owner)
        rec.assigned_leaf = leaf.node_id
        leaf.bucket.add(label)
        self._grant(rec, owner)

    def _descend(self, x: np.ndarray) -> TreeNode:
        # same arithmetic as clustering.greedy_leaf, reusing the cached float64 centroids
        x64 = x.astype(np.float64)
        node, child_f64 = self.root, self._child_f64
        while node.children:
            diff = child_f64[node.node_id][0] - x64
            node = node.children[int((diff * diff).sum(axis=1).argmin())]
        return node

    def grant_access(self, label: Label, tenant: TenantId) -> None:
        tenant = check_tenant(tenant)
        rec = self.store.get(label)
        if tenant in rec.access_list:
            raise AccessError(f"tenant {tenant} already has access to {label}")
        rec.access_list.add(tenant)
        self._grant(rec, tenant)

    def _grant(self, rec: VectorRecord, tenant: TenantId) -> None:
        path = self.nodes[rec.assigned_leaf].path
        mask = self._mask(tenant)
        stop = len(path)
        for i, node in enumerate(path):
            sl = node.shortlists.get(tenant)
            if sl is not None:
                sl.append(rec.label)
                if len(sl) > self.params.max_shortlist_size and node.children:
                    self._split(node, tenant, mask)
                return
            if node.bloom.bits & mask != mask:
                stop = i
                break
        # the parent of the new shortlist must really be internal for the
        # tenant; climb past ancestors admitted only by Bloom false positives
        pos = stop
        while pos > 0 and not self._subtree_has(path[pos - 1], tenant, mask):
            pos -= 1
        if pos == len(path):
            pos -= 1
        path[pos].shortlists[tenant] = [rec.label]
        for node in path[: pos + 1]:
            node.bloom.bits |= mask

    def _split(self, node: TreeNode, tenant: TenantId, mask: int) -> None:
        labels = node.shortlists.pop(tenant)
        depth = node.depth + 1
        recs, nodes = self.store.records, self.nodes
        groups: dict[int, list[Label]] = {}
        for lab in labels:
            # the child on the label's greedy path is its nearest child
            child = nodes[recs[lab].assigned_leaf].path[depth]
            groups.setdefault(child.node_id, []).append(lab)
        for cid in sorted(groups):
            child = nodes[cid]
            child.shortlists[tenant] = groups[cid]
            child.bloom.bits |= mask
            if len(groups[cid]) > self.params.max_shortlist_size and child.children:
                self._split(child, tenant, mask)

    def revoke_access(self, label: Label, tenant: TenantId) -> None:
        rec = self.store.get(label)
        if tenant not in rec.access_list:
            raise AccessError(f"tenant {tenant} has no access to {label}")
        if tenant == rec.owner:
            raise AccessError(f"cannot revoke owner {tenant} of {label}; delete the vector instead")
        rec.access_list.remove(tenant)
        dirty: set[TreeNode] = set()
        self._revoke(rec, tenant, dirty)
        self._refresh_blooms(dirty)

    def delete_vector(self, label: Label) -> None:
        rec = self.store.get(label)
        dirty: set[TreeNode] = set()
        for t in sorted(rec.access_list):
            self._revoke(rec, t, dirty)
        rec.access_list.clear()
        self._refresh_blooms(dirty)
        self.nodes[rec.assigned_leaf].bucket.discard(label)
        self.store.remove(label)

    def _revoke(self, rec: VectorRecord, tenant: TenantId, dirty: set[TreeNode]) -> None:
        for node in self.nodes[rec.assigned_leaf].path:
            sl = node.shortlists.get(tenant)
            if sl is not None:
                break
        else:
            raise AssertionError(f"no shortlist for tenant {tenant} on the path of {rec.label}")
        sl.remove(rec.label)
        if not sl:
            del node.shortlists[tenant]
            dirty.add(node)
        self._merge_upward(node, tenant, dirty)

    def _merge_upward(self, node: TreeNode, tenant: TenantId, dirty: set[TreeNode]) -> None:
        mask = self._mask(tenant)
        cap = self.params.max_shortlist_size
        p = node.parent
        while p is not None:
            total = 0
            holders = []
            for c in p.children:
                sl = c.shortlists.get(tenant)
                if sl is not None:
                    total += len(sl)
                    holders.append(c)
                elif c.bloom.bits & mask == mask and self._subtree_has(c, tenant, mask):
                    return  # an internal child: p stays internal
            if total == 0:
                # p left the tenant's tree; its parent may now be mergeable
                p = p.parent
                continue
            if total >= cap:
                return
            merged: list[Label] = []
            for c in holders:
                merged.extend(c.shortlists.pop(tenant))
                dirty.add(c)
            p.shortlists[tenant] = merged
            p = p.parent

    def _recompute_bloom(self, node: TreeNode) -> int:
        bits = 0
        for c in node.children:
            bits |= c.bloom.bits
        nb, nh = self.params.bloom_bits_per_node, self.params.bloom_hash_count
        for t in node.shortlists:
            bits |= tenant_mask(t, nb, nh)
        return bits

    def _refresh_blooms(self, dirty: Iterable[TreeNode]) -> None:
        """Recompute filters bottom-up, propagating only while they change.

        In batched mode a node only recomputes once it has collected
        ``bloom_batch_size`` refresh requests; until then it keeps stale bits,
        which behave like false positives.
        """
        batching = self.params.bloom_update_batching
        batch = self.params.bloom_batch_size
        heap = [(-n.depth, n.node_id) for n in dirty]
        heapq.heapify(heap)
        queued = {nid for _, nid in heap}
        while heap:
            _, nid = heapq.heappop(heap)
            node = self.nodes[nid]
            if batching:
                node.pending += 1
                if node.pending < batch:
                    continue
                node.pending = 0
            bits = self._recompute_bloom(node)
            if bits == node.bloom.bits:
                continue
            node.bloom.bits = bits
            p = node.parent
            if p is not None and p.node_id not in queued:
                queued.add(p.node_id)
                heapq.heappush(heap, (-p.depth, p.node_id))

    def flush_blooms(self) -> None:
        """Force every deferred Bloom recomputation (batched mode)."""
        for node in reversed(self.nodes):
            node.pending = 0
            node.bloom.bits = self._recompute_bloom(node)

    # ----------------------------------------------------------------- search

    def knn_search(
        self,
        x: Sequence[float] | np.ndarray,
        tenant: TenantId,
        sp: SearchParams,
        *,
        best_first: bool = True,
        executor: Executor | None = None,
        stats: SearchStats | None = None,
    ) -> list[tuple[Label, float]]:
        """Two-stage filtered k-NN for ``tenant``.

        Stage 1 walks the tenant's tree best-first by centroid distance,
        collecting shortlist nodes until they hold ``gamma1*gamma2*k`` labels.
        Stage 2 scans those shortlists nearest-first until ``gamma1*k``
        candidates are gathered and returns the top ``k``. With
        ``best_first=False`` stage 1 instead enumerates the whole tenant tree.
        ``executor`` spreads stage 2 over workers in chunks of 16 labels.
        """
        x = as_vector(x, self.dim)
        clusters = self._collect_clusters(x, tenant, sp, best_first, stats)
        if not clusters:
            return []
        clusters.sort()  # node ids are unique, so shortlists are never compared
        want = sp.gamma1 * sp.k
        labels: list[Label] = []
        used = 0
        for _, _, sl in clusters:
            labels.extend(sl)
            used += 1
            if len(labels) >= want:
                break
        if stats is not None:
            stats.clusters_scanned += used
            stats.vectors_scanned += len(labels)
            stats.candidate_clusters += len(clusters)
        if executor is None or len(labels) <= CHUNK_SIZE:
            dists = self.store.distances(labels, x)
        else:
            chunks = [labels[i:i + CHUNK_SIZE] for i in range(0, len(labels), CHUNK_SIZE)]
            parts = executor.map(self.store.distances, chunks, [x] * len(chunks))
            dists = np.concatenate(list(parts))
        return top_k_arrays(np.array(labels, dtype=np.uint64), dists, sp.k)

    def _collect_clusters(self, x, tenant, sp, best_first, stats):
        if not 0 <= tenant < 2**32:
            return []
        mask = self._mask(tenant)
        nodes, child_f64 = self.nodes, self._child_f64
        # ranking key |c|^2 - 2<c,x> is the squared distance minus |x|^2
        x2 = 2.0 * x.astype(np.float64)
        limit = sp.gamma1 * sp.gamma2 * sp.k if best_first else float("inf")
        frontier = [(0.0, 0)]
        out: list[tuple[float, int, list[Label]]] = []
        n_vecs = 0
        visited = 0
        pop, push = heapq.heappop, heapq.heappush
        while frontier and n_vecs < limit:
            d, nid = pop(frontier)
            node = nodes[nid]
            visited += 1
            if node.bloom.bits & mask != mask:
                continue
            sl = node.shortlists.get(tenant)
            if sl is not None:
                out.append((d, nid, sl))
                n_vecs += len(sl)
            elif node.children:
                c64, norms = child_f64[nid]
                cd = (norms - c64 @ x2).tolist()
                base = node.children[0].node_id
                for j, dist in enumerate(cd):
                    push(frontier, (dist, base + j))
        if stats is not None:
            stats.nodes_visited += visited
        return out

    # ------------------------------------------------------------ accounting

    def memory_usage(self) -> dict[str, int]:
        """Nominal bytes by category, as a compact native layout would need them."""
        p = self.params
        n_nodes = len(self.nodes)
        n_shortlists = sum(len(n.shortlists) for n in self.nodes)
        n_entries = sum(len(sl) for n in self.nodes for sl in n.shortlists.values())
        usage = {
            "vector_data": self.store.vector_bytes(),
            "tree": n_nodes * (self.dim * FLOAT_BYTES + 2 * TENANT_BYTES),
            "bloom_filters": n_nodes * ((p.bloom_bits_per_node + 7) // 8),
            "shortlists": n_entries * LABEL_BYTES + n_shortlists * 2 * TENANT_BYTES,
            "access_lists": self.store.access_list_bytes(),
            "buckets": len(self.store) * (LABEL_BYTES + TENANT_BYTES),
        }
        usage["total"] = sum(usage.values())
        return usage

    # ----------------------------------------------------------- inspection

    def shortlists_of(self, tenant: TenantId) -> dict[int, list[Label]]:
        return {n.node_id: list(n.shortlists[tenant]) for n in self.nodes if tenant in n.shortlists}

    def tenants(self) -> set[TenantId]:
        return {t for r in self.store.records.values() for t in r.access_list}


def train_index(training_vectors: Sequence | np.ndarray, params: CuratorParams | None = None
                ) -> CuratorIndex:
    return CuratorIndex.train(training_vectors, params)
