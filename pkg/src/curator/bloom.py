"""Fixed-size Bloom filters over tenant ids.

Bits are held in a Python int so that union is a single ``|`` and a
membership probe is one ``&`` against a per-tenant mask.
"""

from __future__ import annotations

import math
from functools import lru_cache

_M64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


@lru_cache(maxsize=1 << 16)
def tenant_mask(tenant: int, n_bits: int, n_hashes: int) -> int:
    """Bit mask of the ``n_hashes`` positions tenant ``tenant`` maps to.

    Double hashing (h1 + i*h2) from one 64-bit mix of the tenant id.
    """
    h = _splitmix64(tenant)
    h1, h2 = h & 0xFFFFFFFF, (h >> 32) | 1
    mask = 0
    for i in range(n_hashes):
        mask |= 1 << ((h1 + i * h2) % n_bits)
    return mask


def false_positive_rate(n_bits: int, n_hashes: int, n_items: int) -> float:
    return (1.0 - math.exp(-n_hashes * n_items / n_bits)) ** n_hashes


class TenantBloomFilter:
    __slots__ = ("bits", "n_bits", "n_hashes")

    def __init__(self, n_bits: int = 1024, n_hashes: int = 4, bits: int = 0) -> None:
        if n_bits <= 0 or n_hashes <= 0:
            raise ValueError("n_bits and n_hashes must be positive")
        self.n_bits = n_bits
        self.n_hashes = n_hashes
        self.bits = bits

    def mask(self, tenant: int) -> int:
        return tenant_mask(tenant, self.n_bits, self.n_hashes)

    def add(self, tenant: int) -> None:
        self.bits |= tenant_mask(tenant, self.n_bits, self.n_hashes)

    def __contains__(self, tenant: int) -> bool:
        m = tenant_mask(tenant, self.n_bits, self.n_hashes)
        return self.bits & m == m

    def clear(self) -> None:
        self.bits = 0

    def union(self, other: "TenantBloomFilter") -> "TenantBloomFilter":
        self._check_compatible(other)
        return TenantBloomFilter(self.n_bits, self.n_hashes, self.bits | other.bits)

    def __or__(self, other: "TenantBloomFilter") -> "TenantBloomFilter":
        return self.union(other)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TenantBloomFilter):
            return NotImplemented
        return (self.n_bits, self.n_hashes, self.bits) == (other.n_bits, other.n_hashes, other.bits)

    def __repr__(self) -> str:
        return f"TenantBloomFilter(n_bits={self.n_bits}, n_hashes={self.n_hashes}, set={self.popcount()})"

    def popcount(self) -> int:
        return bin(self.bits).count("1")

    def _check_compatible(self, other: "TenantBloomFilter") -> None:
        if (self.n_bits, self.n_hashes) != (other.n_bits, other.n_hashes):
            raise ValueError("cannot combine Bloom filters with different geometry")

    @property
    def nbytes(self) -> int:
        return (self.n_bits + 7) // 8

    @classmethod
    def from_tenants(cls, tenants, n_bits: int = 1024, n_hashes: int = 4) -> "TenantBloomFilter":
        bf = cls(n_bits, n_hashes)
        for t in tenants:
            bf.add(t)
        return bf
