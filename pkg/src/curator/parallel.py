"""Batch search with inter-query or intra-query parallelism.

Inter-query mode hands whole queries to a worker pool first-come-first-serve.
Intra-query mode keeps tree traversal on the calling thread and spreads the
shortlist scan over workers in chunks of 16 labels. Both produce results that
are identical to a sequential run.
"""

from __future__ import annotations

import multiprocessing as mp
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

Result = list[tuple[int, float]]

# set in the parent right before forking so workers inherit it copy-on-write
_FORKED: tuple | None = None


def _forked_query(i: int) -> Result:
    search, queries, tenants = _FORKED
    return search(queries[i], tenants[i])


def search_inter(search: Callable[[np.ndarray, int], Result], queries: np.ndarray,
                 tenants: Sequence[int], workers: int = 1, backend: str = "process",
                 chunksize: int = 16) -> list[Result]:
    """Run ``search(q, t)`` over every query pair with ``workers`` workers.

    ``backend="process"`` forks worker processes that inherit the index as it
    is at call time (no mutation may overlap the batch); ``"thread"`` uses a
    thread pool and is bounded by the interpreter lock for Python-level work.
    """
    n = len(tenants)
    if workers <= 1 or n == 0:
        return [search(queries[i], tenants[i]) for i in range(n)]
    if backend == "thread":
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda i: search(queries[i], tenants[i]), range(n)))
    if backend != "process":
        raise ValueError(f"unknown backend {backend!r}")
    global _FORKED
    _FORKED = (search, queries, tenants)
    try:
        with mp.get_context("fork").Pool(workers) as pool:
            return pool.map(_forked_query, range(n), chunksize=chunksize)
    finally:
        _FORKED = None


def search_intra(index, queries: np.ndarray, tenants: Sequence[int], sp,
                 workers: int = 1) -> list[Result]:
    """Sequential queries, each scanning its shortlists on ``workers`` threads."""
    if workers <= 1:
        return [index.knn_search(q, t, sp) for q, t in zip(queries, tenants)]
    with ThreadPoolExecutor(workers) as ex:
        return [index.knn_search(q, t, sp, executor=ex) for q, t in zip(queries, tenants)]
