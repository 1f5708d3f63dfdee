"""Vector math, identifiers and the global vector store shared by every index."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

Label = int
TenantId = int

LABEL_MAX = 2**64 - 1
TENANT_MAX = 2**32 - 1

# nominal on-disk/in-memory widths used by memory accounting
FLOAT_BYTES = 4
LABEL_BYTES = 8
TENANT_BYTES = 4


class CuratorError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(CuratorError, ValueError):
    pass


class DuplicateLabel(CuratorError, KeyError):
    pass


class UnknownLabel(CuratorError, KeyError):
    pass


class AccessError(CuratorError, ValueError):
    """Invalid access-list transition (duplicate grant, missing grant, owner revoke)."""


def as_vector(x: Sequence[float] | np.ndarray, dim: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a 1-D float32 array, checking dimension and finiteness."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {arr.shape[0]}")
    if arr.shape[0] == 0:
        raise DimensionMismatch("vectors must have positive dimension")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector components must be finite")
    return arr


def check_label(label: int) -> int:
    label = int(label)
    if not 0 <= label <= LABEL_MAX:
        raise ValueError(f"label {label} outside unsigned 64-bit range")
    return label


def check_tenant(tenant: int) -> int:
    tenant = int(tenant)
    if not 0 <= tenant <= TENANT_MAX:
        raise ValueError(f"tenant {tenant} outside unsigned 32-bit range")
    return tenant


def squared_l2(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Squared Euclidean distance between two vectors of equal dimension."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(squared_l2_rows(a[None, :], b)[0])


def squared_l2_rows(rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Squared L2 distance from each row of ``rows`` to ``x``.

    Accumulates in float64. The value for a given row does not depend on which
    other rows share the batch, so every index and the oracle agree bit for bit.
    """
    diff = rows.astype(np.float64) - x.astype(np.float64)
    return (diff * diff).sum(axis=1)


def top_k_by_distance(
    candidates: Iterable[tuple[Label, float]], k: int
) -> list[tuple[Label, float]]:
    """Return the ``k`` smallest ``(label, distance)`` pairs, ties broken by label."""
    if k <= 0:
        raise ValueError("k must be positive")
    return sorted(candidates, key=lambda c: (c[1], c[0]))[:k]


def top_k_arrays(labels: np.ndarray, dists: np.ndarray, k: int) -> list[tuple[Label, float]]:
    """Vectorized :func:`top_k_by_distance` over parallel label/distance arrays."""
    if len(labels) == 0:
        return []
    order = np.lexsort((labels, dists))[:k]
    return list(zip(labels[order].tolist(), dists[order].tolist()))


@dataclass(eq=False)
class VectorRecord:
    """One stored vector with its access metadata.

    ``data`` is a read-only view into the store's matrix; ``slot`` is the row it
    occupies and is an implementation detail of :class:`VectorStore`.
    """

    label: Label
    data: np.ndarray
    owner: TenantId
    access_list: set[TenantId]
    assigned_leaf: int = -1
    slot: int = field(default=-1, repr=False)

    def snapshot(self) -> "VectorRecord":
        return replace(self, data=self.data.copy(), access_list=set(self.access_list))


class VectorStore:
    """Label-addressed vector storage backed by one growable float32 matrix.

    Vector data lives here exactly once; indexes keep labels only.
    """

    def __init__(self, dim: int, capacity: int = 1024) -> None:
        if dim <= 0:
            raise ValueError("dimension must be positive")
        self.dim = dim
        self.records: dict[Label, VectorRecord] = {}
        # label -> row, kept alongside records so gathers avoid attribute lookups
        self._slots: dict[Label, int] = {}
        self._data = np.zeros((max(capacity, 1), dim), dtype=np.float32)
        self._free: list[int] = []
        self._next_slot = 0

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, label: object) -> bool:
        return label in self.records

    @property
    def matrix(self) -> np.ndarray:
        return self._data

    def _grow(self) -> None:
        new = np.zeros((self._data.shape[0] * 2, self.dim), dtype=np.float32)
        new[: self._data.shape[0]] = self._data
        self._data = new
        for rec in self.records.values():
            rec.data = self._view(rec.slot)

    def _view(self, slot: int) -> np.ndarray:
        v = self._data[slot]
        v.flags.writeable = False
        return v

    def add(self, label: Label, x: np.ndarray, owner: TenantId) -> VectorRecord:
        if label in self.records:
            raise DuplicateLabel(f"label {label} already present")
        if self._free:
            slot = self._free.pop()
        else:
            if self._next_slot >= self._data.shape[0]:
                self._grow()
            slot = self._next_slot
            self._next_slot += 1
        self._data[slot] = x
        rec = VectorRecord(label, self._view(slot), owner, {owner}, slot=slot)
        self.records[label] = rec
        self._slots[label] = slot
        return rec

    def get(self, label: Label) -> VectorRecord:
        try:
            return self.records[label]
        except KeyError:
            raise UnknownLabel(f"unknown label {label}") from None

    def remove(self, label: Label) -> VectorRecord:
        rec = self.get(label)
        del self.records[label]
        del self._slots[label]
        self._free.append(rec.slot)
        return rec

    def distances(self, labels: Sequence[Label], x: np.ndarray) -> np.ndarray:
        slots = list(map(self._slots.__getitem__, labels))
        return squared_l2_rows(self._data[slots], x)

    def accessible(self, tenant: TenantId) -> list[Label]:
        """V(t) by linear scan, in insertion order."""
        return [lab for lab, rec in self.records.items() if tenant in rec.access_list]

    def vector_bytes(self) -> int:
        return len(self.records) * self.dim * FLOAT_BYTES

    def access_list_bytes(self) -> int:
        # owner field plus one tenant id per access-list entry
        return sum(TENANT_BYTES * (1 + len(r.access_list)) for r in self.records.values())


def recall_at_k(found: Iterable[Label], truth: Sequence[Label], k: int) -> float:
    """|found ∩ truth[:k]| / min(k, |truth|); 1.0 when there is nothing to find."""
    truth = list(truth)[:k]
    if not truth:
        return 1.0
    return len(set(found) & set(truth)) / min(k, len(truth))


def percentile(values: Sequence[float], q: float) -> float:
    if len(values) == 0:
        return math.nan
    return float(np.percentile(np.asarray(values, dtype=np.float64), q))
