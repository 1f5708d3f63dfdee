"""Structural checks for :class:`~curator.index.CuratorIndex`.

Used by the test-suite and the fuzz harness; every check is computed from
first principles (access lists, shortlists, tree shape), never from the
index's own bookkeeping shortcuts.
"""

from __future__ import annotations

from collections import Counter, defaultdict

from .bloom import tenant_mask
from .clustering import greedy_leaf
from .index import CuratorIndex


def exact_subtree_tenants(index: CuratorIndex) -> list[set[int]]:
    """For each node id, the tenants holding a shortlist somewhere beneath it."""
    below: list[set[int]] = [set() for _ in index.nodes]
    for node in reversed(index.nodes):  # BFS order reversed: children first
        s = below[node.node_id]
        s.update(node.shortlists)
        for c in node.children:
            s |= below[c.node_id]
    return below


def merge_applicable(index: CuratorIndex, node_id: int, tenant: int,
                     below: list[set[int]] | None = None) -> bool:
    """Whether the merge rule would fire at ``node_id`` for ``tenant``.

    The rule: no child is internal to the tenant's tree and the children's
    shortlists for the tenant total fewer than ``max_shortlist_size`` labels.
    """
    below = below if below is not None else exact_subtree_tenants(index)
    node = index.nodes[node_id]
    total = 0
    for c in node.children:
        sl = c.shortlists.get(tenant)
        if sl is not None:
            total += len(sl)
        elif tenant in below[c.node_id]:
            return False
    return 0 < total < index.params.max_shortlist_size


def check_invariants(index: CuratorIndex, *, check_merge: bool = True,
                     check_routing: bool = False) -> list[str]:
    errors: list[str] = []
    p = index.params
    recs = index.store.records
    below = exact_subtree_tenants(index)

    held: dict[int, Counter] = defaultdict(Counter)
    for node in index.nodes:
        for t, sl in node.shortlists.items():
            if not sl:
                errors.append(f"empty shortlist for tenant {t} at node {node.node_id}")
            if len(set(sl)) != len(sl):
                errors.append(f"duplicate labels in SL({node.node_id},{t})")
            if node.children and len(sl) > p.max_shortlist_size:
                errors.append(f"SL({node.node_id},{t}) has {len(sl)} > {p.max_shortlist_size}")
            for lab in sl:
                rec = recs.get(lab)
                if rec is None:
                    errors.append(f"SL({node.node_id},{t}) holds deleted label {lab}")
                    continue
                if t not in rec.access_list:
                    errors.append(f"SL({node.node_id},{t}) holds {lab} without access")
                if node not in index.nodes[rec.assigned_leaf].path:
                    errors.append(f"label {lab} in SL({node.node_id},{t}) off its leaf path")
                held[t][lab] += 1

    expected: dict[int, Counter] = defaultdict(Counter)
    for lab, rec in recs.items():
        if rec.owner not in rec.access_list:
            errors.append(f"owner of {lab} missing from its access list")
        for t in rec.access_list:
            expected[t][lab] += 1
        leaf = index.nodes[rec.assigned_leaf]
        if leaf.children:
            errors.append(f"label {lab} assigned to internal node {leaf.node_id}")
        if lab not in leaf.bucket:
            errors.append(f"label {lab} missing from bucket of node {leaf.node_id}")
        for t in rec.access_list:
            n_sl = sum(1 for n in leaf.path if t in n.shortlists)
            if n_sl != 1:
                errors.append(f"{n_sl} shortlists for tenant {t} on the path of {lab}")
        if check_routing and greedy_leaf(index.root, rec.data) is not leaf:
            errors.append(f"label {lab} not at its greedy leaf")
    for t in set(held) | set(expected):
        if held[t] != expected[t]:
            errors.append(f"shortlists of tenant {t} do not partition its accessible set")

    bucketed = sum(len(n.bucket) for n in index.nodes)
    if bucketed != len(recs):
        errors.append(f"{bucketed} bucketed labels for {len(recs)} records")

    nb, nh = p.bloom_bits_per_node, p.bloom_hash_count
    for node in index.nodes:
        exact_bits = 0
        for t in below[node.node_id]:
            m = tenant_mask(t, nb, nh)
            exact_bits |= m
            if node.bloom.bits & m != m:
                errors.append(f"Bloom filter at node {node.node_id} misses tenant {t}")
        if not p.bloom_update_batching and node.bloom.bits != exact_bits:
            errors.append(f"Bloom filter at node {node.node_id} is not exact")

    if check_merge:
        for node in index.nodes:
            for t in below[node.node_id]:
                if t not in node.shortlists and merge_applicable(index, node.node_id, t, below):
                    errors.append(f"merge rule still applicable at node {node.node_id} for {t}")
    return errors
