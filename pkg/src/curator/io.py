"""File formats, synthetic workloads and index snapshots.

Formats
-------
``*.fvecs``
    Per vector: little-endian int32 ``d`` then ``d`` little-endian float32.
access JSON-lines
    ``{"label": int, "owner": int, "tenants": [int, ...]}`` per line.
queries JSON-lines
    ``{"tenant": int, "vector": [float, ...]}`` per line.
ground-truth JSON-lines
    ``{"query": i, "tenant": t, "labels": [...], "distances": [...]}``.
index snapshot
    ``MAGIC | u32 version | u64 header length | JSON header | float32 centroids |
    float32 vectors | sha256 of everything before it``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import CuratorError, VectorStore, check_label, check_tenant


class FormatError(CuratorError, ValueError):
    pass


class FvecsHeaderError(FormatError):
    pass


class FvecsDimensionError(FormatError):
    pass


class FvecsTruncatedError(FormatError):
    pass


class LineFormatError(FormatError):
    """A JSON-lines file has a bad line; ``line`` is 1-based."""

    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


AccessFormatError = LineFormatError


class SnapshotError(FormatError):
    pass


class SnapshotVersionError(SnapshotError):
    pass


class SnapshotChecksumError(SnapshotError):
    pass


def _atomic_write(path: str | os.PathLike, data: bytes | Iterable[bytes]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            if isinstance(data, (bytes, bytearray)):
                f.write(data)
            else:
                for chunk in data:
                    f.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ------------------------------------------------------------------- fvecs

def write_fvecs(path: str | os.PathLike, vectors: np.ndarray | Sequence) -> None:
    arr = np.asarray(vectors, dtype="<f4")
    if arr.size == 0:
        _atomic_write(path, b"")
        return
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array of vectors")
    n, d = arr.shape
    out = np.empty((n, d + 1), dtype="<f4")
    out[:, 1:] = arr
    out.view("<i4")[:, 0] = d
    _atomic_write(path, out.tobytes())


def parse_fvecs(buf: bytes) -> np.ndarray:
    if not buf:
        return np.zeros((0, 0), dtype=np.float32)
    if len(buf) < 4:
        raise FvecsHeaderError(f"{len(buf)} stray bytes where a header was expected")
    d = struct.unpack_from("<i", buf, 0)[0]
    if d <= 0:
        raise FvecsHeaderError(f"non-positive dimension {d} at offset 0")
    row = 4 * (d + 1)
    if len(buf) % row == 0:
        raw = np.frombuffer(buf, dtype="<i4").reshape(-1, d + 1)
        if np.all(raw[:, 0] == d):
            return raw[:, 1:].view("<f4").astype(np.float32)
    # slow path only to name the precise defect
    off = 0
    while off < len(buf):
        if len(buf) - off < 4:
            raise FvecsHeaderError(f"{len(buf) - off} stray bytes at offset {off}")
        di = struct.unpack_from("<i", buf, off)[0]
        if di <= 0:
            raise FvecsHeaderError(f"non-positive dimension {di} at offset {off}")
        if di != d:
            raise FvecsDimensionError(f"dimension {di} at offset {off}, expected {d}")
        if len(buf) - off - 4 < 4 * di:
            raise FvecsTruncatedError(
                f"vector at offset {off} declares {di} floats, {len(buf) - off - 4} bytes remain")
        off += 4 * (di + 1)
    raise FormatError("inconsistent fvecs layout")  # unreachable in practice


def read_fvecs(path: str | os.PathLike) -> np.ndarray:
    """Read an fvecs file into an ``(n, d)`` float32 array (``(0, 0)`` if empty)."""
    return parse_fvecs(Path(path).read_bytes())


# ------------------------------------------------------------ access lists

@dataclass(frozen=True)
class AccessRecord:
    label: int
    owner: int
    tenants: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(set(self.tenants)) != len(self.tenants):
            raise ValueError(f"duplicate tenant in access list of {self.label}")
        if self.owner not in self.tenants:
            raise ValueError(f"owner {self.owner} missing from access list of {self.label}")

    def to_json(self) -> str:
        return json.dumps({"label": self.label, "owner": self.owner,
                           "tenants": list(self.tenants)}, separators=(",", ":"))


def _json_lines(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            stripped = line.strip()
            if not stripped:
                raise LineFormatError(lineno, "blank line")
            try:
                obj = json.loads(stripped)
            except json.JSONDecodeError as e:
                raise LineFormatError(lineno, f"invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise LineFormatError(lineno, "expected a JSON object")
            yield lineno, obj


def _int_field(obj: dict, key: str, lineno: int) -> int:
    v = obj.get(key)
    if not isinstance(v, int) or isinstance(v, bool):
        raise LineFormatError(lineno, f"field {key!r} must be an integer")
    return v


def iter_access_jsonl(path: str | os.PathLike) -> Iterator[AccessRecord]:
    """Stream access records one line at a time."""
    for lineno, obj in _json_lines(path):
        if set(obj) != {"label", "owner", "tenants"}:
            raise LineFormatError(lineno, f"unexpected fields {sorted(obj)}")
        tenants = obj["tenants"]
        if not isinstance(tenants, list) or not all(
                isinstance(t, int) and not isinstance(t, bool) for t in tenants):
            raise LineFormatError(lineno, "field 'tenants' must be a list of integers")
        try:
            label = check_label(_int_field(obj, "label", lineno))
            owner = check_tenant(_int_field(obj, "owner", lineno))
            yield AccessRecord(label, owner, tuple(check_tenant(t) for t in tenants))
        except ValueError as e:
            if isinstance(e, LineFormatError):
                raise
            raise LineFormatError(lineno, str(e)) from None


def read_access_jsonl(path: str | os.PathLike) -> list[AccessRecord]:
    return list(iter_access_jsonl(path))


def write_access_jsonl(path: str | os.PathLike, records: Iterable[AccessRecord]) -> None:
    _atomic_write(path, (r.to_json().encode() + b"\n" for r in records))


# ------------------------------------------------------------------ queries

def write_queries_jsonl(path: str | os.PathLike, vectors: np.ndarray, tenants: Sequence[int]) -> None:
    vectors = np.asarray(vectors, dtype=np.float32)
    if len(vectors) != len(tenants):
        raise ValueError("one tenant per query vector")

    def lines():
        for v, t in zip(vectors, tenants):
            yield (json.dumps({"tenant": int(t), "vector": v.tolist()},
                              separators=(",", ":")) + "\n").encode()
    _atomic_write(path, lines())


def read_queries_jsonl(path: str | os.PathLike, dim: int | None = None
                       ) -> tuple[np.ndarray, list[int]]:
    vecs, tenants = [], []
    for lineno, obj in _json_lines(path):
        t = check_tenant(_int_field(obj, "tenant", lineno))
        v = obj.get("vector")
        if not isinstance(v, list) or not v:
            raise LineFormatError(lineno, "field 'vector' must be a non-empty list")
        if dim is not None and len(v) != dim:
            raise LineFormatError(lineno, f"vector has dimension {len(v)}, expected {dim}")
        if vecs and len(v) != len(vecs[0]):
            raise LineFormatError(lineno, "inconsistent query dimension")
        vecs.append(v)
        tenants.append(t)
    arr = np.asarray(vecs, dtype=np.float32) if vecs else np.zeros((0, dim or 0), np.float32)
    return arr, tenants


# ------------------------------------------------------------- ground truth

def write_ground_truth_jsonl(path: str | os.PathLike, tenants: Sequence[int],
                             results: Sequence[Sequence[tuple[int, float]]]) -> None:
    if len(tenants) != len(results):
        raise ValueError("one result row per query")

    def lines():
        for i, (t, row) in enumerate(zip(tenants, results)):
            yield (json.dumps({"query": i, "tenant": int(t),
                               "labels": [int(l) for l, _ in row],
                               "distances": [float(d) for _, d in row]},
                              separators=(",", ":")) + "\n").encode()
    _atomic_write(path, lines())


def read_ground_truth_jsonl(path: str | os.PathLike) -> list[list[tuple[int, float]]]:
    rows = []
    for lineno, obj in _json_lines(path):
        if obj.get("query") != len(rows):
            raise LineFormatError(lineno, "ground-truth rows out of order")
        labels, dists = obj.get("labels"), obj.get("distances")
        if not isinstance(labels, list) or not isinstance(dists, list) or len(labels) != len(dists):
            raise LineFormatError(lineno, "labels/distances must be equal-length lists")
        rows.append(list(zip(labels, dists)))
    return rows


# ------------------------------------------------------------ dataset loading

def load_store(vectors_path: str | os.PathLike, access_path: str | os.PathLike) -> VectorStore:
    """Build a bare :class:`VectorStore` from a vectors/access file pair.

    Row ``i`` of the fvecs file pairs with line ``i`` of the access file.
    """
    vecs = read_fvecs(vectors_path)
    records = read_access_jsonl(access_path)
    if len(records) != len(vecs):
        raise FormatError(f"{len(vecs)} vectors but {len(records)} access records")
    store = VectorStore(max(vecs.shape[1], 1), capacity=max(len(vecs), 1))
    for v, r in zip(vecs, records):
        rec = store.add(r.label, v, r.owner)
        rec.access_list.update(r.tenants)
    return store


# ---------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a synthetic multi-tenant workload.

    Exactly one of ``per_tenant_count`` (each tenant sees that many vectors;
    uncovered vectors go to a background tenant ``n_tenants`` that is never
    queried) or ``sharing_degree`` (mean access-list length) drives access.
    ``zipf_exponent`` skews tenant popularity; ``locality`` is the fraction of
    access picks drawn from tenants "homed" on the vector's mixture component,
    so that tenant data is spatially coherent the way tag-based access is.
    """

    n_vectors: int
    dimension: int
    n_tenants: int
    per_tenant_count: int | None = None
    sharing_degree: float | None = None
    zipf_exponent: float = 0.0
    locality: float = 0.0
    n_queries: int = 1000
    n_centers: int = 64
    cluster_std: float = 0.3
    home_fraction: float = 0.125
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_vectors", "dimension", "n_tenants", "n_centers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_queries < 0:
            raise ValueError("n_queries must be non-negative")
        if (self.per_tenant_count is None) == (self.sharing_degree is None):
            raise ValueError("give exactly one of per_tenant_count or sharing_degree")
        if self.per_tenant_count is not None:
            if self.per_tenant_count <= 0:
                raise ValueError("per_tenant_count must be positive")
            if self.per_tenant_count > self.n_vectors:
                raise ValueError("per_tenant_count exceeds n_vectors")
        if self.sharing_degree is not None and not 1.0 <= self.sharing_degree <= self.n_tenants:
            raise ValueError("sharing_degree must lie in [1, n_tenants]")
        if not 0.0 <= self.locality <= 1.0:
            raise ValueError("locality must lie in [0, 1]")
        if self.zipf_exponent < 0:
            raise ValueError("zipf_exponent must be non-negative")

    @property
    def background_tenant(self) -> int:
        return self.n_tenants


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    vectors: np.ndarray
    access: list[AccessRecord]
    query_vectors: np.ndarray
    query_tenants: list[int]
    components: np.ndarray = field(repr=False)

    @property
    def sharing_degree(self) -> float:
        return float(np.mean([len(r.tenants) for r in self.access]))

    @property
    def query_tenant_ids(self) -> list[int]:
        return list(range(self.spec.n_tenants))

    def selectivity(self, tenant: int) -> float:
        return sum(tenant in r.tenants for r in self.access) / len(self.access)


def synthesize(spec: SyntheticSpec) -> SyntheticData:
    """Generate vectors, access records and query pairs, deterministic in ``seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, d, T = spec.n_vectors, spec.dimension, spec.n_tenants
    centers = rng.normal(0.0, 1.0, (spec.n_centers, d))
    comp = rng.integers(spec.n_centers, size=n)
    vectors = (centers[comp] + rng.normal(0.0, spec.cluster_std, (n, d))).astype(np.float32)

    n_home = max(1, round(spec.n_centers * spec.home_fraction))
    homes = [rng.choice(spec.n_centers, size=n_home, replace=False) for _ in range(T)]
    homed_at: list[list[int]] = [[] for _ in range(spec.n_centers)]
    for t, hs in enumerate(homes):
        for c in hs:
            homed_at[c].append(t)
    popularity = 1.0 / np.arange(1, T + 1) ** spec.zipf_exponent
    popularity = popularity[rng.permutation(T)]

    tenant_sets: list[list[int]] = [[] for _ in range(n)]
    if spec.per_tenant_count is not None:
        by_comp = [np.flatnonzero(comp == c) for c in range(spec.n_centers)]
        for t in range(T):
            m = spec.per_tenant_count
            local_pool = np.concatenate([by_comp[c] for c in homes[t]])
            n_local = min(int(round(spec.locality * m)), len(local_pool))
            chosen = rng.choice(local_pool, size=n_local, replace=False) if n_local else np.zeros(0, int)
            rest = np.setdiff1d(np.arange(n), chosen, assume_unique=False)
            chosen = np.concatenate([chosen, rng.choice(rest, size=m - n_local, replace=False)])
            for i in chosen.tolist():
                tenant_sets[i].append(t)
    else:
        p_all = popularity / popularity.sum()
        degrees = np.clip(1 + rng.poisson(spec.sharing_degree - 1.0, size=n), 1, T)
        local = rng.random(size=n) < spec.locality
        for i in range(n):
            pool = homed_at[comp[i]] if local[i] and homed_at[comp[i]] else None
            if pool is not None and len(pool) >= degrees[i]:
                w = popularity[pool]
                picks = rng.choice(pool, size=degrees[i], replace=False, p=w / w.sum())
            else:
                picks = rng.choice(T, size=degrees[i], replace=False, p=p_all)
            tenant_sets[i] = [int(t) for t in picks]

    access = []
    for i, ts in enumerate(tenant_sets):
        if not ts:
            access.append(AccessRecord(i, spec.background_tenant, (spec.background_tenant,)))
            continue
        ts = sorted(ts)
        owner = ts[int(rng.integers(len(ts)))]
        access.append(AccessRecord(i, owner, tuple(ts)))

    # queries: a fresh point drawn near a random vector the tenant can access
    members: list[list[int]] = [[] for _ in range(T)]
    for r in access:
        for t in r.tenants:
            if t < T:
                members[t].append(r.label)
    live = [t for t in range(T) if members[t]]
    q_tenants = rng.choice(live, size=spec.n_queries).tolist() if live else []
    q_vecs = np.empty((len(q_tenants), d), dtype=np.float32)
    for j, t in enumerate(q_tenants):
        anchor = members[t][int(rng.integers(len(members[t])))]
        q_vecs[j] = centers[comp[anchor]] + rng.normal(0.0, spec.cluster_std, d)
    return SyntheticData(spec, vectors, access, q_vecs, [int(t) for t in q_tenants], comp)


@dataclass
class GeneratedFiles:
    vectors: Path
    access: Path
    queries: Path
    sharing_degree: float


def gen_synthetic(spec: SyntheticSpec, out_dir: str | os.PathLike, prefix: str = "") -> GeneratedFiles:
    data = synthesize(spec)
    out = Path(out_dir)
    files = GeneratedFiles(out / f"{prefix}vectors.fvecs", out / f"{prefix}access.jsonl",
                           out / f"{prefix}queries.jsonl", data.sharing_degree)
    write_fvecs(files.vectors, data.vectors)
    write_access_jsonl(files.access, data.access)
    write_queries_jsonl(files.queries, data.query_vectors, data.query_tenants)
    n_bg = sum(r.owner == spec.background_tenant for r in data.access)
    meta = {"spec": asdict(spec), "sharing_degree": data.sharing_degree,
            "background_tenant": spec.background_tenant if n_bg else None,
            "n_background": n_bg}
    _atomic_write(out / f"{prefix}meta.json", (json.dumps(meta, indent=2) + "\n").encode())
    return files


# ---------------------------------------------------------------- snapshots

SNAPSHOT_MAGIC = b"CURATOR\x00"
SNAPSHOT_VERSION = 1
_HEAD = struct.Struct("<8sIQ")


def save_index(index, path: str | os.PathLike) -> None:
    """Write a versioned, checksummed snapshot of a :class:`CuratorIndex`."""
    from .index import CuratorIndex

    if not isinstance(index, CuratorIndex):
        raise TypeError("save_index expects a CuratorIndex")
    p = index.params
    recs = list(index.store.records.values())
    header = {
        "dim": index.dim,
        "params": {**asdict(p), "gct": asdict(p.gct)},
        "parents": [n.parent.node_id if n.parent else -1 for n in index.nodes],
        "bloom": [format(n.bloom.bits, "x") for n in index.nodes],
        "pending": [n.pending for n in index.nodes],
        "shortlists": [[n.node_id, t, sl] for n in index.nodes for t, sl in n.shortlists.items()],
        "records": [[r.label, r.owner, sorted(r.access_list), r.assigned_leaf] for r in recs],
    }
    hbytes = json.dumps(header, separators=(",", ":")).encode()
    body = bytearray(_HEAD.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, len(hbytes)))
    body += hbytes
    body += np.stack([n.centroid for n in index.nodes]).astype("<f4").tobytes()
    if recs:
        body += index.store.matrix[[r.slot for r in recs]].astype("<f4").tobytes()
    body += hashlib.sha256(body).digest()
    _atomic_write(path, bytes(body))


def load_index(path: str | os.PathLike):
    from .clustering import GctParams, TreeNode
    from .index import CuratorIndex, CuratorParams

    buf = Path(path).read_bytes()
    if len(buf) < _HEAD.size + 32:
        raise SnapshotError("snapshot too short")
    magic, version, hlen = _HEAD.unpack_from(buf, 0)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError("not an index snapshot")
    if hashlib.sha256(buf[:-32]).digest() != buf[-32:]:
        raise SnapshotChecksumError("snapshot checksum mismatch")
    if version != SNAPSHOT_VERSION:
        raise SnapshotVersionError(f"snapshot version {version}, expected {SNAPSHOT_VERSION}")
    off = _HEAD.size
    try:
        header = json.loads(buf[off:off + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise SnapshotError(f"corrupt header: {e}") from None
    off += hlen
    dim = header["dim"]
    parents = header["parents"]
    n_nodes, n_recs = len(parents), len(header["records"])
    need = off + 4 * dim * (n_nodes + n_recs) + 32
    if len(buf) != need:
        raise SnapshotError(f"snapshot has {len(buf)} bytes, expected {need}")
    cents = np.frombuffer(buf, "<f4", n_nodes * dim, off).reshape(n_nodes, dim)
    off += 4 * dim * n_nodes
    vecs = np.frombuffer(buf, "<f4", n_recs * dim, off).reshape(n_recs, dim)

    nodes: list[TreeNode] = []
    for i, par in enumerate(parents):
        parent = nodes[par] if par >= 0 else None
        node = TreeNode(cents[i].copy(), parent.depth + 1 if parent else 0, parent)
        if parent is not None:
            parent.children.append(node)
        nodes.append(node)
    pdict = dict(header["params"])
    params = CuratorParams(**{**pdict, "gct": GctParams(**pdict["gct"])})
    index = CuratorIndex(nodes[0], params)
    if [n.node_id for n in index.nodes] != list(range(n_nodes)) or index.nodes != nodes:
        raise SnapshotError("tree layout does not round-trip")
    for node, bits, pend in zip(index.nodes, header["bloom"], header["pending"]):
        node.bloom.bits = int(bits, 16)
        node.pending = pend
    for nid, t, sl in header["shortlists"]:
        index.nodes[nid].shortlists[t] = list(sl)
    for (label, owner, tenants, leaf), v in zip(header["records"], vecs):
        rec = index.store.add(label, v, owner)
        rec.access_list.update(tenants)
        rec.assigned_leaf = leaf
        index.nodes[leaf].bucket.add(label)
    return index
