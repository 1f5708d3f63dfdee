"""Multi-tenant approximate nearest-neighbour search.

One shared hierarchical k-means tree indexes every vector once; each tenant
sees only the part of the tree that holds its own vectors, tracked by per-node
Bloom filters and per-node shortlists of labels.
"""

from .baselines import (
    CuratorNoBFS,
    FlatIVFBloom,
    FlatIVFBloomShortlist,
    IvfParams,
    IvfSearchParams,
    IvfSearchStats,
    MetadataFilterIVF,
    PerTenantIVF,
)
from .bloom import TenantBloomFilter
from .clustering import GctParams, KMeansParams, build_gct, kmeans
from .core import (
    AccessError,
    CuratorError,
    DimensionMismatch,
    DuplicateLabel,
    UnknownLabel,
    VectorRecord,
    VectorStore,
    recall_at_k,
)
from .index import CuratorIndex, CuratorParams, SearchParams, SearchStats, train_index
from .oracle import exact_filtered_knn, exact_filtered_knn_batch

__all__ = [
    "AccessError",
    "CuratorError",
    "CuratorIndex",
    "CuratorNoBFS",
    "CuratorParams",
    "DimensionMismatch",
    "DuplicateLabel",
    "FlatIVFBloom",
    "FlatIVFBloomShortlist",
    "GctParams",
    "IvfParams",
    "IvfSearchParams",
    "IvfSearchStats",
    "KMeansParams",
    "MetadataFilterIVF",
    "PerTenantIVF",
    "SearchParams",
    "SearchStats",
    "TenantBloomFilter",
    "UnknownLabel",
    "VectorRecord",
    "VectorStore",
    "build_gct",
    "exact_filtered_knn",
    "exact_filtered_knn_batch",
    "kmeans",
    "recall_at_k",
    "train_index",
]

__version__ = "0.1.0"
