"""Benchmark harness: configuration, protocol runner and command line."""

from .config import INDEX_TYPES, BenchConfig, ConfigError
from .runner import (
    BenchResult,
    GridResult,
    Workload,
    grid_search,
    load_workload,
    run_bench,
    sweep,
    threads_scaling,
)

__all__ = [
    "INDEX_TYPES",
    "BenchConfig",
    "BenchResult",
    "ConfigError",
    "GridResult",
    "Workload",
    "grid_search",
    "load_workload",
    "run_bench",
    "sweep",
    "threads_scaling",
]
