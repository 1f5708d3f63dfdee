"""``curator-bench``: dataset generation, ground truth and benchmark runs.

Every subcommand prints one JSON object on success. On failure it prints a
single ``{"status": "error", ...}`` line to stderr and exits with status 2.
Relative dataset paths that do not exist are looked up under
``$CURATOR_DATA_DIR``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import MISSING, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..clustering import GctParams
from ..core import CuratorError
from ..index import CuratorIndex, CuratorParams
from ..io import SyntheticSpec, gen_synthetic, read_access_jsonl, read_fvecs, save_index
from ..oracle import ground_truth_file
from .config import DATA_DIR_ENV, BenchConfig, ConfigError, data_dir
from .runner import (
    SWEEP_KINDS,
    grid_search,
    load_workload,
    run_bench,
    sweep,
    threads_scaling,
    write_rows,
)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _json_obj(text: str) -> dict:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise argparse.ArgumentTypeError(f"invalid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return obj


def _parser_for(ftype: str):
    if ftype.startswith("list"):
        return _int_list
    if ftype.startswith("bool"):
        return _bool
    if ftype.startswith("dict"):
        return _json_obj
    if ftype.startswith("float"):
        return float
    if ftype.startswith("int"):
        return int
    return str


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with BenchConfig fields; flags override it")
    for f in fields(BenchConfig):
        default = f.default if f.default is not MISSING else f.default_factory()
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=_parser_for(str(f.type)),
                       default=argparse.SUPPRESS, help=f"default: {default}")
    p.add_argument("--out", help="CSV output path")


def _resolve(path: str | None) -> str | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_absolute() and not p.exists():
        alt = data_dir() / p
        if alt.exists():
            return str(alt)
    return str(p)


def config_from_args(args: argparse.Namespace) -> BenchConfig:
    base = BenchConfig.from_json(_resolve(args.config)).to_dict() if args.config else {}
    for f in fields(BenchConfig):
        if hasattr(args, f.name):
            base[f.name] = getattr(args, f.name)
    for key in ("vectors", "access", "queries"):
        base[key] = _resolve(base.get(key))
    cfg = BenchConfig.from_dict(base)
    cfg.validate()
    return cfg


def _out_path(args, default_name: str) -> Path:
    return Path(args.out) if getattr(args, "out", None) else data_dir() / default_name


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> dict[str, Any]:
    spec = SyntheticSpec(
        n_vectors=args.n_vectors, dimension=args.dimension, n_tenants=args.n_tenants,
        per_tenant_count=args.per_tenant_count, sharing_degree=args.sharing_degree,
        zipf_exponent=args.zipf_exponent, locality=args.locality, n_queries=args.n_queries,
        n_centers=args.n_centers, cluster_std=args.cluster_std, seed=args.seed,
    )
    out = Path(args.out) if args.out else data_dir()
    files = gen_synthetic(spec, out, args.prefix)
    return {"vectors": str(files.vectors), "access": str(files.access),
            "queries": str(files.queries), "sharing_degree": files.sharing_degree}


def cmd_gt(args) -> dict[str, Any]:
    out = ground_truth_file(_resolve(args.vectors), _resolve(args.access), _resolve(args.queries),
                            args.k, args.out, args.workers)
    return {"ground_truth": str(out)}


def cmd_train(args) -> dict[str, Any]:
    vectors = read_fvecs(_resolve(args.vectors))
    access = read_access_jsonl(_resolve(args.access)) if args.access else []
    if access and len(access) != len(vectors):
        raise ConfigError(f"{len(vectors)} vectors but {len(access)} access records")
    training = vectors
    if args.train_sample and args.train_sample < len(vectors):
        rng = np.random.default_rng(args.seed)
        training = vectors[np.sort(rng.choice(len(vectors), args.train_sample, replace=False))]
    params = CuratorParams(
        GctParams(args.branching_factor, args.max_depth, args.min_train_points_per_node, args.seed),
        max_shortlist_size=args.max_shortlist_size, bloom_bits_per_node=args.bloom_bits,
        bloom_hash_count=args.bloom_hashes)
    index = CuratorIndex.train(training, params)
    for v, r in zip(vectors, access):
        index.insert_vector(v, r.label, r.owner)
        for t in r.tenants:
            if t != r.owner:
                index.grant_access(r.label, t)
    out = _out_path(args, "index.snapshot")
    save_index(index, out)
    return {"snapshot": str(out), "nodes": len(index.nodes), "vectors": len(index)}


def cmd_bench(args) -> dict[str, Any]:
    cfg = config_from_args(args)
    res = run_bench(cfg)
    out = res.write_csv(_out_path(args, f"bench_{cfg.index_type}_{cfg.config_hash()}.csv"))
    return {"csv": str(out), "config_hash": res.config_hash, "feasible": res.grid.feasible,
            "summary": res.grid.describe(), "search": res.ops["search"],
            "memory_total": res.memory["total"]}


def cmd_grid(args) -> dict[str, Any]:
    cfg = config_from_args(args)
    grid = grid_search(cfg)
    rows = [{"config_hash": cfg.config_hash(), "seed": cfg.seed, "index_type": cfg.index_type,
             **{k: (json.dumps(v, sort_keys=True) if k == "params" else v) for k, v in r.items()},
             "chosen": r is grid.best} for r in grid.frontier]
    out = write_rows(_out_path(args, f"grid_{cfg.index_type}_{cfg.config_hash()}.csv"), rows)
    result = {"csv": str(out), "feasible": grid.feasible, "summary": grid.describe(),
              "best_recall": grid.best_recall}
    if grid.best is not None:
        result["best"] = grid.best["params"]
    return result


def cmd_sweep(args) -> dict[str, Any]:
    cfg = config_from_args(args)
    types = args.index_types.split(",") if args.index_types else None
    rows = sweep(cfg, args.kind, _int_list(args.values), types)
    out = write_rows(_out_path(args, f"sweep_{args.kind}_{cfg.config_hash()}.csv"), rows)
    return {"csv": str(out), "points": len(rows)}


def cmd_threads(args) -> dict[str, Any]:
    cfg = config_from_args(args)
    rows = threads_scaling(cfg, load_workload(cfg))
    rows = [{"config_hash": cfg.config_hash(), "seed": cfg.seed, "index_type": cfg.index_type, **r}
            for r in rows]
    out = write_rows(_out_path(args, f"threads_{cfg.parallelism}_{cfg.config_hash()}.csv"), rows)
    return {"csv": str(out), "identical": all(r["identical"] for r in rows), "rows": rows}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="curator-bench",
        description=f"Multi-tenant ANN benchmark harness (data directory: ${DATA_DIR_ENV}).")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--n-vectors", type=int, required=True)
    g.add_argument("--dimension", type=int, required=True)
    g.add_argument("--n-tenants", type=int, required=True)
    g.add_argument("--per-tenant-count", type=int)
    g.add_argument("--sharing-degree", type=float)
    g.add_argument("--zipf-exponent", type=float, default=0.0)
    g.add_argument("--locality", type=float, default=0.0)
    g.add_argument("--n-queries", type=int, default=1000)
    g.add_argument("--n-centers", type=int, default=64)
    g.add_argument("--cluster-std", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--prefix", default="")
    g.add_argument("--out", help="output directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("gt", help="exact ground truth for a query file")
    t.add_argument("--vectors", required=True)
    t.add_argument("--access", required=True)
    t.add_argument("--queries", required=True)
    t.add_argument("--k", type=int, default=10)
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_gt)

    tr = sub.add_parser("train", help="train a curator index and save a snapshot")
    tr.add_argument("--vectors", required=True)
    tr.add_argument("--access", help="optional access file; its records are inserted")
    tr.add_argument("--train-sample", type=int)
    tr.add_argument("--branching-factor", type=int, default=8)
    tr.add_argument("--max-depth", type=int, default=8)
    tr.add_argument("--min-train-points-per-node", type=int, default=64)
    tr.add_argument("--max-shortlist-size", type=int, default=32)
    tr.add_argument("--bloom-bits", type=int, default=1024)
    tr.add_argument("--bloom-hashes", type=int, default=4)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", help="snapshot path")
    tr.set_defaults(func=cmd_train)

    for name, func, help_ in (("bench", cmd_bench, "full benchmark protocol"),
                              ("grid", cmd_grid, "grid search only"),
                              ("threads", cmd_threads, "worker-count scaling")):
        sp = sub.add_parser(name, help=help_)
        _add_config_flags(sp)
        sp.set_defaults(func=func)

    sw = sub.add_parser("sweep", help="selectivity or tenant-count sweep")
    _add_config_flags(sw)
    sw.add_argument("--kind", choices=sorted(SWEEP_KINDS), required=True)
    sw.add_argument("--values", required=True, help="comma-separated sweep values")
    sw.add_argument("--index-types", help="comma-separated index types (default: --index-type)")
    sw.set_defaults(func=cmd_sweep)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except (CuratorError, ConfigError, OSError, ValueError, KeyError) as e:
        line = {"status": "error", "command": args.command, "type": type(e).__name__,
                "message": str(e)}
        print(json.dumps(line), file=sys.stderr)
        return 2
    print(json.dumps({"status": "ok", "command": args.command, **result}, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
