"""Benchmark configuration: one flat record, loadable from JSON or CLI flags."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

INDEX_TYPES = ("curator", "mf_ivf", "pt_ivf", "flat_ivf_bf", "flat_ivf_bf_sl", "curator_no_bfs")
TREE_TYPES = ("curator", "curator_no_bfs")
PARALLELISM = ("none", "inter", "intra")
QUERY_MODES = ("split", "given")
DATA_DIR_ENV = "CURATOR_DATA_DIR"


class ConfigError(ValueError):
    pass


def data_dir() -> Path:
    """Default directory for datasets and outputs (``$CURATOR_DATA_DIR`` or ``./data``)."""
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


@dataclass
class BenchConfig:
    """Everything that determines a benchmark run.

    The dataset is either a pair of files (``vectors`` + ``access``) or an
    inline ``synthetic`` spec (keyword arguments of ``SyntheticSpec``). With
    ``query_mode="split"`` the first ``test_size`` records of a seeded
    permutation are held out and every (vector, tenant) pair on their access
    lists becomes a query; with ``"given"`` all records are inserted and the
    queries come from ``queries`` or from the synthetic generator.
    """

    index_type: str = "curator"
    vectors: str | None = None
    access: str | None = None
    queries: str | None = None
    synthetic: dict[str, Any] | None = None
    query_mode: str = "split"
    test_size: int = 1000
    max_queries: int | None = None
    train_sample: int | None = None
    k: int = 10
    gamma1: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 16])
    gamma2: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    nprobe: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64, 128])
    branching_factor: int = 8
    max_depth: int = 8
    min_train_points_per_node: int = 64
    max_shortlist_size: int = 32
    bloom_bits: int = 1024
    bloom_hashes: int = 4
    bloom_update_batching: bool = False
    n_clusters: int | None = None
    threads: list[int] = field(default_factory=lambda: [1])
    parallelism: str = "none"
    backend: str = "process"
    recall_floor: float = 0.9
    timing_repeats: int = 1
    mutation_sample: int = 1000
    delete_phase: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.index_type not in INDEX_TYPES:
            raise ConfigError(f"index_type must be one of {', '.join(INDEX_TYPES)}")
        if self.parallelism not in PARALLELISM:
            raise ConfigError(f"parallelism must be one of {', '.join(PARALLELISM)}")
        if self.backend not in ("process", "thread"):
            raise ConfigError("backend must be process or thread")
        if self.query_mode not in QUERY_MODES:
            raise ConfigError(f"query_mode must be one of {', '.join(QUERY_MODES)}")
        if (self.vectors is None) == (self.synthetic is None):
            raise ConfigError("give either vectors+access files or a synthetic spec")
        if self.vectors is not None and self.access is None:
            raise ConfigError("vectors given without an access file")
        if self.query_mode == "given" and self.queries is None and self.synthetic is None:
            raise ConfigError("query_mode 'given' needs a queries file")
        # 0 is accepted too: it asks the grid search for the fastest point outright
        if not 0.0 <= self.recall_floor <= 1.0:
            raise ConfigError("recall_floor must lie in [0, 1]")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.timing_repeats < 1:
            raise ConfigError("timing_repeats must be >= 1")
        if self.test_size < 1 and self.query_mode == "split":
            raise ConfigError("test_size must be >= 1")
        for name in ("gamma1", "gamma2", "nprobe", "threads"):
            vals = getattr(self, name)
            if not vals or any(int(v) < 1 for v in vals):
                raise ConfigError(f"{name} must be a non-empty list of positive integers")
        if self.min_train_points_per_node < self.branching_factor:
            raise ConfigError("min_train_points_per_node must be >= branching_factor")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def with_(self, **changes: Any) -> "BenchConfig":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BenchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "BenchConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(d)
