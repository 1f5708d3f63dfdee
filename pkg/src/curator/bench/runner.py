"""Benchmark protocol: train, insert with grants, query grid, mutations, deletes.

Timings use a monotonic clock per operation and never include ground-truth
computation or file I/O. Every emitted row carries the config hash and seed.
"""

from __future__ import annotations

import contextlib
import csv
import gc
import json
import math
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from ..baselines import (
    CuratorNoBFS,
    FlatIVFBloom,
    FlatIVFBloomShortlist,
    IvfParams,
    IvfSearchStats,
    MetadataFilterIVF,
    PerTenantIVF,
)
from ..clustering import GctParams
from ..core import VectorStore, percentile, recall_at_k
from ..index import CuratorIndex, CuratorParams, SearchParams, SearchStats
from ..io import (
    AccessRecord,
    SyntheticSpec,
    read_access_jsonl,
    read_fvecs,
    read_queries_jsonl,
    synthesize,
)
from ..oracle import exact_filtered_knn_batch
from ..parallel import search_inter
from .config import TREE_TYPES, BenchConfig, ConfigError

Result = list[tuple[int, float]]


@contextlib.contextmanager
def paused_gc():
    """Collect once, then keep the cyclic collector out of timed sections."""
    was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


# ------------------------------------------------------------------ workload

@dataclass
class Workload:
    """Inserted records, query pairs and their exact answers."""

    vectors: np.ndarray
    access: list[AccessRecord]
    query_vectors: np.ndarray
    query_tenants: list[int]
    truth: list[Result]
    background: int | None = None

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def n_vectors(self) -> int:
        return len(self.access)

    def tenant_sizes(self) -> dict[int, int]:
        sizes: dict[int, int] = defaultdict(int)
        for r in self.access:
            for t in r.tenants:
                sizes[t] += 1
        return dict(sizes)

    def summary(self) -> dict[str, float]:
        sizes = self.tenant_sizes()
        qsel = [sizes.get(t, 0) / max(self.n_vectors, 1) for t in self.query_tenants]
        return {
            "n_vectors": self.n_vectors,
            "dim": self.dim,
            "n_queries": len(self.query_tenants),
            "n_tenants": len([t for t in sizes if t != self.background]),
            "sharing_degree": float(np.mean([len(r.tenants) for r in self.access])) if self.access else 0.0,
            "mean_query_selectivity": float(np.mean(qsel)) if qsel else 0.0,
        }


def _background_from_meta(access_path: str) -> int | None:
    p = Path(access_path)
    prefix = p.name[: -len("access.jsonl")] if p.name.endswith("access.jsonl") else ""
    meta = p.with_name(f"{prefix}meta.json")
    if not meta.exists():
        return None
    return json.loads(meta.read_text()).get("background_tenant")


def load_workload(cfg: BenchConfig) -> Workload:
    """Read or generate the dataset, form query pairs and compute ground truth."""
    cfg.validate()
    given_q: tuple[np.ndarray, list[int]] | None = None
    if cfg.synthetic is not None:
        try:
            spec = SyntheticSpec(**cfg.synthetic)
            data = synthesize(spec)
        except TypeError as e:
            raise ConfigError(f"bad synthetic spec: {e}") from None
        vectors, access = data.vectors, data.access
        background = spec.background_tenant if spec.per_tenant_count is not None else None
        given_q = (data.query_vectors, data.query_tenants)
    else:
        vectors = read_fvecs(cfg.vectors)
        access = read_access_jsonl(cfg.access)
        if len(vectors) != len(access):
            raise ConfigError(f"{len(vectors)} vectors but {len(access)} access records")
        background = _background_from_meta(cfg.access)
    if cfg.queries is not None:
        given_q = read_queries_jsonl(cfg.queries, vectors.shape[1] if len(vectors) else None)

    rng = np.random.default_rng(cfg.seed)
    if cfg.query_mode == "split":
        if cfg.test_size >= len(access):
            raise ConfigError(f"test_size {cfg.test_size} leaves no vectors to insert")
        perm = rng.permutation(len(access))
        test, train = np.sort(perm[: cfg.test_size]), np.sort(perm[cfg.test_size:])
        qv, qt = [], []
        for i in test.tolist():
            for t in access[i].tenants:
                if t != background:
                    qv.append(vectors[i])
                    qt.append(t)
        q_vectors = np.array(qv, dtype=np.float32).reshape(-1, vectors.shape[1])
        q_tenants = qt
        vectors, access = vectors[train], [access[i] for i in train.tolist()]
    else:
        q_vectors, q_tenants = given_q
        keep = [j for j, t in enumerate(q_tenants) if t != background]
        q_vectors, q_tenants = q_vectors[keep], [int(q_tenants[j]) for j in keep]
    if cfg.max_queries is not None and len(q_tenants) > cfg.max_queries:
        pick = np.sort(rng.choice(len(q_tenants), cfg.max_queries, replace=False))
        q_vectors, q_tenants = q_vectors[pick], [q_tenants[j] for j in pick.tolist()]

    store = VectorStore(vectors.shape[1], capacity=max(len(access), 1))
    for v, r in zip(vectors, access):
        store.add(r.label, v, r.owner).access_list.update(r.tenants)
    truth = exact_filtered_knn_batch(store, q_vectors, q_tenants, cfg.k)
    return Workload(vectors, access, q_vectors, q_tenants, truth, background)


# -------------------------------------------------------------------- indexes

def default_n_clusters(n_vectors: int) -> int:
    return max(1, int(round(4 * math.sqrt(n_vectors))))


def build_index(cfg: BenchConfig, wl: Workload):
    """Train (but do not populate) the index named by ``cfg.index_type``."""
    training = wl.vectors
    if cfg.train_sample is not None and cfg.train_sample < len(training):
        rng = np.random.default_rng(cfg.seed + 1)
        training = training[np.sort(rng.choice(len(training), cfg.train_sample, replace=False))]
    it = cfg.index_type
    if it in TREE_TYPES:
        params = CuratorParams(
            GctParams(cfg.branching_factor, cfg.max_depth, cfg.min_train_points_per_node, cfg.seed),
            max_shortlist_size=cfg.max_shortlist_size,
            bloom_bits_per_node=cfg.bloom_bits,
            bloom_hash_count=cfg.bloom_hashes,
            bloom_update_batching=cfg.bloom_update_batching,
        )
        cls = CuratorIndex if it == "curator" else CuratorNoBFS
        return cls.train(training, params)
    nlist = cfg.n_clusters or default_n_clusters(len(wl.vectors))
    ivf = IvfParams(n_clusters=nlist, nprobe=cfg.nprobe[0])
    if it == "mf_ivf":
        return MetadataFilterIVF.train(training, ivf, seed=cfg.seed)
    if it in ("flat_ivf_bf", "flat_ivf_bf_sl"):
        cls = FlatIVFBloom if it == "flat_ivf_bf" else FlatIVFBloomShortlist
        return cls.train(training, ivf, seed=cfg.seed, bloom_bits=cfg.bloom_bits,
                         bloom_hashes=cfg.bloom_hashes)
    # per-tenant: each tenant's index is trained on that tenant's own vectors
    pt = PerTenantIVF(wl.dim, ivf)
    rows: dict[int, list[int]] = defaultdict(list)
    for i, r in enumerate(wl.access):
        for t in r.tenants:
            rows[t].append(i)
    for t in sorted(rows):
        pt.create_tenant_index(t, wl.vectors[rows[t]], seed=cfg.seed)
    return pt


def populate(index, wl: Workload) -> list[int]:
    """Insert every record and grant its tenants; returns per-vector nanoseconds."""
    lat = []
    clock = time.perf_counter_ns
    with paused_gc():
        for v, r in zip(wl.vectors, wl.access):
            t0 = clock()
            index.insert_vector(v, r.label, r.owner)
            for t in r.tenants:
                if t != r.owner:
                    index.grant_access(r.label, t)
            lat.append(clock() - t0)
    return lat


def grid_points(cfg: BenchConfig) -> list[dict[str, int]]:
    if cfg.index_type in TREE_TYPES:
        return [{"gamma1": int(a), "gamma2": int(b)} for a in cfg.gamma1 for b in cfg.gamma2]
    return [{"nprobe": int(p)} for p in cfg.nprobe]


def make_searcher(index, index_type: str, point: dict[str, int], k: int, *,
                  stats=None, executor=None) -> Callable[[np.ndarray, int], Result]:
    if index_type in TREE_TYPES:
        sp = SearchParams(k, point["gamma1"], point["gamma2"])
        if executor is not None:
            return lambda q, t: index.knn_search(q, t, sp, executor=executor, stats=stats)
        return lambda q, t: index.knn_search(q, t, sp, stats=stats)
    nprobe = point["nprobe"]
    return lambda q, t: index.search(q, t, k, nprobe, stats)


def new_stats(index_type: str):
    return SearchStats() if index_type in TREE_TYPES else IvfSearchStats()


def timed_queries(search: Callable[[np.ndarray, int], Result], wl: Workload
                  ) -> tuple[list[Result], list[int]]:
    clock = time.perf_counter_ns
    results, lat = [], []
    with paused_gc():
        for q, t in zip(wl.query_vectors, wl.query_tenants):
            t0 = clock()
            results.append(search(q, t))
            lat.append(clock() - t0)
    return results, lat


def mean_recall(results: Sequence[Result], truth: Sequence[Result], k: int) -> float:
    if not results:
        return 1.0
    return float(np.mean([recall_at_k([l for l, _ in r], [l for l, _ in g], k)
                          for r, g in zip(results, truth)]))


def _op_summary(lat_ns: Sequence[int]) -> dict[str, float]:
    ms = [x / 1e6 for x in lat_ns]
    return {"count": len(ms), "mean_ms": float(np.mean(ms)) if ms else math.nan,
            "p99_ms": percentile(ms, 99)}


def evaluate_point(index, cfg: BenchConfig, wl: Workload, point: dict[str, int]) -> dict[str, Any]:
    """Recall, latency and mean traversal counters at one grid point.

    The query set is timed ``cfg.timing_repeats`` times and the pass with the
    lowest mean latency is kept; searches are deterministic, so only the
    timings differ between passes. Counters come from the first pass, which
    every index type pays for with the same few attribute increments.
    """
    stats = new_stats(cfg.index_type)
    search = make_searcher(index, cfg.index_type, point, cfg.k, stats=stats)
    results, lat = timed_queries(search, wl)
    if cfg.timing_repeats > 1:
        plain = make_searcher(index, cfg.index_type, point, cfg.k)
        for _ in range(cfg.timing_repeats - 1):
            again = timed_queries(plain, wl)[1]
            if sum(again) < sum(lat):
                lat = again
    n = max(len(wl.query_tenants), 1)
    row: dict[str, Any] = {"params": dict(point),
                           "recall": mean_recall(results, wl.truth, cfg.k),
                           **_op_summary(lat)}
    row["qps"] = 1e3 / row["mean_ms"] if row["mean_ms"] else math.nan
    row.update({f"avg_{k}": v / n for k, v in asdict(stats).items()})
    return row


# ------------------------------------------------------------------ grid search

@dataclass
class GridResult:
    """Outcome of a grid search; ``best`` is None when no point is feasible."""

    index_type: str
    recall_floor: float
    frontier: list[dict[str, Any]]
    best: dict[str, Any] | None

    @property
    def feasible(self) -> bool:
        return self.best is not None

    @property
    def best_recall(self) -> float:
        return max((r["recall"] for r in self.frontier), default=math.nan)

    def describe(self) -> str:
        if self.best is None:
            return (f"infeasible: no {self.index_type} grid point reaches recall "
                    f"{self.recall_floor}; best recall achieved {self.best_recall:.4f}")
        return (f"{self.index_type} {self.best['params']}: recall {self.best['recall']:.4f}, "
                f"mean {self.best['mean_ms']:.4f} ms")


def pick_best(frontier: list[dict[str, Any]], floor: float) -> dict[str, Any] | None:
    ok = [r for r in frontier if r["recall"] >= floor]
    return min(ok, key=lambda r: r["mean_ms"]) if ok else None


def _mark_pareto(frontier: list[dict[str, Any]]) -> None:
    for r in frontier:
        r["pareto"] = not any(o["recall"] >= r["recall"] and o["mean_ms"] < r["mean_ms"]
                              for o in frontier if o is not r)


def grid_search(cfg: BenchConfig, wl: Workload | None = None, index=None) -> GridResult:
    """Evaluate every grid point; the best is the fastest one meeting ``recall_floor``."""
    if wl is None:
        wl = load_workload(cfg)
    if index is None:
        index = build_index(cfg, wl)
        populate(index, wl)
    points = grid_points(cfg)
    # untimed pass so the first grid point is not charged for cold caches
    timed_queries(make_searcher(index, cfg.index_type, points[0], cfg.k), wl)
    frontier = [evaluate_point(index, cfg, wl, p) for p in points]
    _mark_pareto(frontier)
    return GridResult(cfg.index_type, cfg.recall_floor, frontier,
                      pick_best(frontier, cfg.recall_floor))


# ---------------------------------------------------------------- run_bench

@dataclass
class BenchResult:
    config: BenchConfig
    dataset: dict[str, float]
    train_seconds: float
    grid: GridResult
    ops: dict[str, dict[str, float]]
    memory: dict[str, int]
    threads: list[dict[str, Any]] = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    @property
    def search(self) -> dict[str, Any]:
        """The chosen operating point, or the highest-recall point if infeasible."""
        if self.grid.best is not None:
            return self.grid.best
        return max(self.grid.frontier, key=lambda r: (r["recall"], -r["mean_ms"]))

    def rows(self) -> list[dict[str, Any]]:
        """Tidy long-format rows: (section, name, params, value)."""
        base = {"config_hash": self.config_hash, "seed": self.config.seed,
                "index_type": self.config.index_type}
        out = []

        def add(section, name, value, params=""):
            out.append({**base, "section": section, "name": name,
                        "params": json.dumps(params, sort_keys=True) if params else "",
                        "value": value})

        for k, v in self.dataset.items():
            add("dataset", k, v)
        add("train", "seconds", self.train_seconds)
        for r in self.grid.frontier:
            for k, v in r.items():
                if k != "params":
                    add("grid", k, v, r["params"])
        add("grid", "feasible", self.grid.feasible)
        add("grid", "best_recall", self.grid.best_recall)
        if self.grid.best is not None:
            add("grid", "best", json.dumps(self.grid.best["params"], sort_keys=True))
        for op, s in self.ops.items():
            for k, v in s.items():
                add(op, k, v)
        for k, v in self.memory.items():
            add("memory", k, v)
        for r in self.threads:
            for k, v in r.items():
                if k not in ("workers", "mode", "params"):
                    add("threads", k, v, {"workers": r["workers"], "mode": r["mode"]})
        return out

    def write_csv(self, path: str | Path) -> Path:
        return write_rows(path, self.rows())


def write_rows(path: str | Path, rows: Sequence[dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols: list[str] = []
    for r in rows:
        cols.extend(c for c in r if c not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    return path


def _mutation_pairs(wl: Workload, n: int, seed: int) -> list[tuple[int, int]]:
    """Random (label, tenant) pairs where the tenant lacks access today."""
    tenants = sorted(t for t in wl.tenant_sizes() if t != wl.background)
    if n <= 0 or len(tenants) < 2 or not wl.access:
        return []
    rng = np.random.default_rng(seed + 2)
    pairs, seen = [], set()
    for _ in range(20 * n):
        r = wl.access[int(rng.integers(len(wl.access)))]
        t = tenants[int(rng.integers(len(tenants)))]
        if t not in r.tenants and (r.label, t) not in seen:
            seen.add((r.label, t))
            pairs.append((r.label, t))
            if len(pairs) == n:
                break
    return pairs


def run_bench(cfg: BenchConfig, wl: Workload | None = None) -> BenchResult:
    """Full protocol for one index type.

    Configuration and dataset errors surface from :func:`load_workload`
    before anything is timed.
    """
    cfg.validate()
    if wl is None:
        wl = load_workload(cfg)
    t0 = time.perf_counter()
    index = build_index(cfg, wl)
    train_s = time.perf_counter() - t0
    ops = {"insert": _op_summary(populate(index, wl))}

    grid = grid_search(cfg, wl, index)
    best = grid.best or max(grid.frontier, key=lambda r: r["recall"])
    ops["search"] = {k: best[k] for k in ("count", "mean_ms", "p99_ms")}
    memory = index.memory_usage()

    threads = []
    if cfg.parallelism != "none":
        threads = threads_scaling(cfg, wl, index, best["params"])

    clock = time.perf_counter_ns
    g_lat, r_lat = [], []
    with paused_gc():
        for label, t in _mutation_pairs(wl, cfg.mutation_sample, cfg.seed):
            a = clock()
            index.grant_access(label, t)
            b = clock()
            index.revoke_access(label, t)
            g_lat.append(b - a)
            r_lat.append(clock() - b)
    ops["grant"] = _op_summary(g_lat)
    ops["revoke"] = _op_summary(r_lat)

    d_lat = []
    if cfg.delete_phase:
        with paused_gc():
            for r in wl.access:
                a = clock()
                index.delete_vector(r.label)
                d_lat.append(clock() - a)
    ops["delete"] = _op_summary(d_lat)
    return BenchResult(cfg, wl.summary(), train_s, grid, ops, memory, threads)


# ----------------------------------------------------------------- sweeps

SWEEP_KINDS = {"selectivity": "n_vectors", "tenants": "n_tenants"}


def sweep(cfg: BenchConfig, kind: str, values: Sequence[int],
          index_types: Sequence[str] | None = None) -> list[dict[str, Any]]:
    """One row per (point, index type).

    ``selectivity`` grows the total vector count with tenant count and
    per-tenant count fixed; ``tenants`` grows the tenant count with totals
    fixed, which raises the sharing degree.
    """
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"sweep kind must be one of {', '.join(SWEEP_KINDS)}")
    if cfg.synthetic is None:
        raise ConfigError("sweeps need a synthetic spec")
    if not values:
        raise ConfigError("sweep needs at least one value")
    index_types = list(index_types or [cfg.index_type])
    rows = []
    for v in values:
        point_cfg = cfg.with_(synthetic={**cfg.synthetic, SWEEP_KINDS[kind]: int(v)})
        wl = load_workload(point_cfg)
        for it in index_types:
            res = run_bench(point_cfg.with_(index_type=it), wl)
            s = res.search
            rows.append({
                "config_hash": res.config_hash, "seed": cfg.seed, "sweep": kind, "value": int(v),
                "index_type": it, **wl.summary(), "feasible": res.grid.feasible,
                "params": json.dumps(s["params"], sort_keys=True), "recall": s["recall"],
                "mean_ms": s["mean_ms"], "p99_ms": s["p99_ms"],
                "memory_total": res.memory["total"],
                "insert_mean_ms": res.ops["insert"]["mean_ms"],
            })
    return rows


# ------------------------------------------------------------ thread scaling

def threads_scaling(cfg: BenchConfig, wl: Workload | None = None, index=None,
                    point: dict[str, int] | None = None) -> list[dict[str, Any]]:
    """Latency/throughput against worker count, checking results never change.

    ``inter`` runs the whole query batch on a pool of workers and reports
    throughput; ``intra`` runs queries one by one with the shortlist scan
    spread over a thread pool and reports mean latency, overall and over the
    queries that scan at least 16 clusters.
    """
    mode = cfg.parallelism
    if mode not in ("inter", "intra"):
        raise ConfigError("threads scaling needs parallelism 'inter' or 'intra'")
    if mode == "intra" and cfg.index_type not in TREE_TYPES:
        raise ConfigError("intra-query parallelism applies to curator indexes only")
    if wl is None:
        wl = load_workload(cfg)
    if index is None:
        index = build_index(cfg, wl)
        populate(index, wl)
    point = point or grid_points(cfg)[-1]
    workers_list = sorted({1, *map(int, cfg.threads)})

    heavy = None
    if mode == "intra":
        heavy = []
        for q, t in zip(wl.query_vectors, wl.query_tenants):
            st = SearchStats()
            index.knn_search(q, t, SearchParams(cfg.k, point["gamma1"], point["gamma2"]), stats=st)
            heavy.append(st.clusters_scanned >= 16)

    rows, baseline = [], None
    for w in workers_list:
        if mode == "inter":
            search = make_searcher(index, cfg.index_type, point, cfg.k)
            with paused_gc():
                t0 = time.perf_counter()
                results = search_inter(search, wl.query_vectors, wl.query_tenants, w, cfg.backend)
                wall = time.perf_counter() - t0
            row = {"throughput_qps": len(results) / wall if wall else math.nan,
                   "batch_seconds": wall}
        else:
            with ThreadPoolExecutor(w) as ex:
                search = make_searcher(index, cfg.index_type, point, cfg.k,
                                       executor=ex if w > 1 else None)
                results, lat = timed_queries(search, wl)
            ms = np.array(lat) / 1e6
            sel = ms[np.array(heavy, dtype=bool)] if heavy else ms[:0]
            row = {"mean_ms": float(ms.mean()) if len(ms) else math.nan,
                   "heavy_queries": int(len(sel)),
                   "heavy_mean_ms": float(sel.mean()) if len(sel) else math.nan}
        if baseline is None:
            baseline = results
        rows.append({"workers": w, "mode": mode, "params": json.dumps(point, sort_keys=True),
                     **row, "identical": results == baseline})
    return rows
