"""Exact brute-force filtered k-NN: the ground truth for every recall number."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Label, TenantId, VectorStore, as_vector, squared_l2_rows, top_k_arrays


def exact_filtered_knn(store: VectorStore, x: Sequence[float] | np.ndarray, tenant: TenantId,
                       k: int) -> list[tuple[Label, float]]:
    """Scan every record, keep those ``tenant`` may access, return the top ``k``."""
    x = as_vector(x, store.dim)
    labels = []
    slots = []
    for lab, rec in store.records.items():
        if tenant in rec.access_list:
            labels.append(lab)
            slots.append(rec.slot)
    if not labels:
        return []
    dists = squared_l2_rows(store.matrix[slots], x)
    return top_k_arrays(np.array(labels, dtype=np.uint64), dists, k)


def _tenant_rows(store: VectorStore) -> dict[TenantId, tuple[np.ndarray, np.ndarray]]:
    by_tenant: dict[TenantId, tuple[list, list]] = {}
    for lab, rec in store.records.items():
        for t in rec.access_list:
            labs, slots = by_tenant.setdefault(t, ([], []))
            labs.append(lab)
            slots.append(rec.slot)
    return {t: (np.array(l, dtype=np.uint64), np.array(s, dtype=np.int64))
            for t, (l, s) in by_tenant.items()}


def exact_filtered_knn_batch(store: VectorStore, queries: np.ndarray, tenants: Sequence[int],
                             k: int, workers: int = 1) -> list[list[tuple[Label, float]]]:
    """Ground truth for many ``(query, tenant)`` pairs.

    Access lists are scanned once per call rather than once per query; each
    query is then exact over its tenant's rows. ``workers`` splits the query
    range into contiguous blocks; the output is identical for any worker count.
    """
    queries = np.asarray(queries, dtype=np.float32)
    rows = _tenant_rows(store)
    matrix = store.matrix

    def run(lo: int, hi: int):
        out = []
        for i in range(lo, hi):
            entry = rows.get(int(tenants[i]))
            if entry is None:
                out.append([])
                continue
            labs, slots = entry
            out.append(top_k_arrays(labs, squared_l2_rows(matrix[slots], queries[i]), k))
        return out

    n = len(tenants)
    if workers <= 1 or n < 2:
        return run(0, n)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    with ThreadPoolExecutor(workers) as ex:
        parts = list(ex.map(run, bounds[:-1], bounds[1:]))
    return [r for part in parts for r in part]


def write_ground_truth(path: str | os.PathLike, tenants: Sequence[int],
                       results: Sequence[Sequence[tuple[Label, float]]]) -> None:
    """Persist ground truth atomically; see :func:`curator.io.write_ground_truth_jsonl`."""
    from .io import write_ground_truth_jsonl

    write_ground_truth_jsonl(path, tenants, results)


def ground_truth_file(vectors_path: str | os.PathLike, access_path: str | os.PathLike,
                      queries_path: str | os.PathLike, k: int, out_path: str | os.PathLike,
                      workers: int = 1) -> Path:
    """Load a dataset and its query pairs, compute exact top-``k``, write it out.

    Every input is fully parsed before anything is written, so a malformed
    input never leaves partial output behind.
    """
    from .io import load_store, read_queries_jsonl

    store = load_store(vectors_path, access_path)
    qvecs, qtenants = read_queries_jsonl(queries_path, store.dim)
    results = exact_filtered_knn_batch(store, qvecs, qtenants, k, workers)
    write_ground_truth(out_path, qtenants, results)
    return Path(out_path)
