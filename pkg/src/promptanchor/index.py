"""Exact and approximate top-k cosine search over a normalized store.

The flat index is a brute-force scan: every query is a double-precision
matrix-vector product followed by a deterministic sort. The partitioned
index is an inverted-file structure: spherical k-means assigns every row
to its most-similar unit centroid, and a query searches only the rows of
the ``probes`` partitions whose centroids score highest.

All ranking ties break by ascending row id so that any experiment built
on top of a search is bitwise reproducible.

Index files (``.ridx``) are little-endian:

  bytes 0-3   magic ``RIDX``
  bytes 4-5   version, u16, currently 1
  byte  6     kind: 0 = flat, 1 = partitioned
  byte  7     reserved, 0
  bytes 8-11  dim, u32
  bytes 12-19 count, u64
  (partitioned only)
  bytes 20-23 P, u32
  bytes 24-27 default probes, u32
  next        P * dim float64 centroids, row-major
  next        count u32 partition assignments

Vectors are not stored; loading takes the same corpus store the index was
built from and reproduces query results exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .store import EmbeddingStore
from .util import parallel_map

RIDX_MAGIC = b"RIDX"
RIDX_VERSION = 1
_RIDX_HEADER = struct.Struct("<4sHBBIQ")
_KIND_FLAT = 0
_KIND_PARTITIONED = 1

#: Queries must be unit vectors up to this tolerance.
QUERY_NORM_TOLERANCE = 1e-3
#: Default cap on Lloyd iterations for spherical k-means.
KMEANS_MAX_ITERS = 20


@dataclass
class RetrievalResult:
    """Ranked hits for one query: (row_id, similarity), best first."""

    hits: list[tuple[int, float]]

    @property
    def ids(self) -> list[int]:
        return [h[0] for h in self.hits]

    @property
    def similarities(self) -> list[float]:
        return [h[1] for h in self.hits]

    def __len__(self) -> int:
        return len(self.hits)


@dataclass
class FlatIndex:
    """Exact search over every row of a normalized store."""

    store: EmbeddingStore
    _matrix: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self._matrix.shape[0]

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]


@dataclass
class PartitionedIndex:
    """Inverted-file search: spherical k-means partitions plus probing."""

    store: EmbeddingStore
    _matrix: np.ndarray = field(repr=False)
    centroids: np.ndarray
    assignments: np.ndarray
    probes: int
    _partitions: list[np.ndarray] = field(repr=False)

    @property
    def size(self) -> int:
        return self._matrix.shape[0]

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    @property
    def num_partitions(self) -> int:
        return self.centroids.shape[0]


def _require_normalized(store: EmbeddingStore) -> None:
    if not store.normalized:
        raise ValidationError("index requires a normalized store; run normalize first")


def _check_query(dim: int, query: Sequence[float]) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != dim:
        raise ValidationError(f"query has dim {q.shape[0]}, index has dim {dim}")
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > QUERY_NORM_TOLERANCE:
        raise ValidationError(f"query norm {norm:.6g} is not within 1e-3 of 1")
    return q


def _select_top(sims: np.ndarray, ids: np.ndarray, k: int) -> RetrievalResult:
    order = np.lexsort((ids, -sims))[: min(k, sims.shape[0])]
    return RetrievalResult(hits=[(int(ids[i]), float(sims[i])) for i in order])


def build_flat_index(store: EmbeddingStore) -> FlatIndex:
    """Index every row of a normalized, non-empty store."""
    _require_normalized(store)
    if store.count < 1:
        raise ValidationError("cannot index an empty store")
    return FlatIndex(store=store, _matrix=store.as_float64())


def flat_top_k(index: FlatIndex, query: Sequence[float], k: int) -> RetrievalResult:
    """Exact top-k by dot product; ties break by ascending row id.

    Returns min(k, count) hits. k larger than the store saturates silently.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    q = _check_query(index.dim, query)
    sims = index._matrix @ q
    return _select_top(sims, np.arange(index.size), k)


def _spherical_kmeans(
    matrix: np.ndarray, partitions: int, seed: int, max_iters: int
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations on the unit sphere.

    Initialization picks ``partitions`` distinct rows with a seeded
    generator. Empty partitions are re-seeded with the row farthest from
    its current centroid. Stops when assignments stop changing or after
    ``max_iters`` updates; the returned assignment is always consistent
    with the returned centroids.
    """
    n = matrix.shape[0]
    rng = np.random.default_rng(seed)
    centroids = matrix[rng.choice(n, size=partitions, replace=False)].copy()
    prev: np.ndarray | None = None
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        sims = matrix @ centroids.T
        assign = np.argmax(sims, axis=1)
        if prev is not None and np.array_equal(assign, prev):
            break
        own = sims[np.arange(n), assign]
        for p in range(partitions):
            members = np.flatnonzero(assign == p)
            if members.size:
                mean = matrix[members].mean(axis=0)
                norm = float(np.linalg.norm(mean))
                if norm >= 1e-12:
                    centroids[p] = mean / norm
                    continue
            r = int(np.argmin(own))
            centroids[p] = matrix[r]
            own[r] = 1.0  # keep later reseeds in this pass distinct
        prev = assign
    else:
        assign = np.argmax(matrix @ centroids.T, axis=1)
    return centroids, assign


def build_partitioned_index(
    store: EmbeddingStore,
    partitions: int,
    probes: int,
    seed: int = 0,
    max_iters: int = KMEANS_MAX_ITERS,
) -> PartitionedIndex:
    """Cluster the store into ``partitions`` cells and record assignments.

    Args:
        store: normalized corpus store, count >= partitions.
        partitions: number of cells P, P >= 1.
        probes: default number of cells searched per query, in [1, P].
        seed: generator seed for the k-means initialization.
    """
    _require_normalized(store)
    if partitions < 1:
        raise ValidationError(f"partitions must be >= 1, got {partitions}")
    if partitions > store.count:
        raise ValidationError(
            f"partitions ({partitions}) cannot exceed store count ({store.count})"
        )
    if not 1 <= probes <= partitions:
        raise ValidationError(f"probes must be in [1, {partitions}], got {probes}")
    matrix = store.as_float64()
    centroids, assign = _spherical_kmeans(matrix, partitions, seed, max_iters)
    parts = [np.flatnonzero(assign == p) for p in range(partitions)]
    return PartitionedIndex(
        store=store,
        _matrix=matrix,
        centroids=centroids,
        assignments=assign,
        probes=probes,
        _partitions=parts,
    )


def approx_top_k(
    index: PartitionedIndex,
    query: Sequence[float],
    k: int,
    probes: int | None = None,
) -> RetrievalResult:
    """Exact top-k restricted to the most query-similar partitions.

    With probes equal to the partition count this is identical to
    flat_top_k, including tie handling.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if probes is None:
        probes = index.probes
    P = index.num_partitions
    if not 1 <= probes <= P:
        raise ValidationError(f"probes must be in [1, {P}], got {probes}")
    q = _check_query(index.dim, query)
    centroid_sims = index.centroids @ q
    chosen = np.lexsort((np.arange(P), -centroid_sims))[:probes]
    candidates = np.sort(np.concatenate([index._partitions[p] for p in chosen]))
    sims = index._matrix[candidates] @ q
    return _select_top(sims, candidates, k)


def query_top_k(
    index: FlatIndex | PartitionedIndex, query: Sequence[float], k: int
) -> RetrievalResult:
    """Dispatch to the right search for either index kind."""
    if isinstance(index, FlatIndex):
        return flat_top_k(index, query, k)
    return approx_top_k(index, query, k)


def flat_top_k_batch(
    index: FlatIndex, queries: np.ndarray, k: int, threads: int = 1
) -> list[RetrievalResult]:
    """Per-query flat search; order-preserving, thread-count independent."""
    rows = np.asarray(queries, dtype=np.float64)
    return parallel_map(lambda q: flat_top_k(index, q, k), list(rows), threads)


def approx_top_k_batch(
    index: PartitionedIndex,
    queries: np.ndarray,
    k: int,
    probes: int | None = None,
    threads: int = 1,
) -> list[RetrievalResult]:
    rows = np.asarray(queries, dtype=np.float64)
    return parallel_map(lambda q: approx_top_k(index, q, k, probes), list(rows), threads)


def save_index(index: FlatIndex | PartitionedIndex, path: str | Path) -> Path:
    """Persist an index; vectors stay in the corpus store it was built on."""
    path = Path(path)
    if isinstance(index, FlatIndex):
        kind = _KIND_FLAT
        body = b""
    else:
        kind = _KIND_PARTITIONED
        body = (
            struct.pack("<II", index.num_partitions, index.probes)
            + np.ascontiguousarray(index.centroids, dtype="<f8").tobytes(order="C")
            + index.assignments.astype("<u4").tobytes()
        )
    header = _RIDX_HEADER.pack(RIDX_MAGIC, RIDX_VERSION, kind, 0, index.dim, index.size)
    path.write_bytes(header + body)
    return path


def load_index(path: str | Path, store: EmbeddingStore) -> FlatIndex | PartitionedIndex:
    """Reconstruct an index against the store it was built from.

    Query results after a round trip are bit-identical to the in-memory
    index: centroids are stored in full double precision and assignments
    verbatim, so no re-clustering happens at load time.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing file: {path}")
    raw = path.read_bytes()
    if len(raw) < _RIDX_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, kind, reserved, dim, count = _RIDX_HEADER.unpack(raw[: _RIDX_HEADER.size])
    if magic != RIDX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != RIDX_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if reserved != 0:
        raise FormatError(f"{path}: reserved header byte is 0x{reserved:02x}")
    if dim != store.dim or count != store.count:
        raise ValidationError(
            f"{path}: index is over a {count}x{dim} store, "
            f"given store is {store.count}x{store.dim}"
        )
    if kind == _KIND_FLAT:
        if len(raw) != _RIDX_HEADER.size:
            raise FormatError(f"{path}: unexpected trailing bytes in flat index")
        return build_flat_index(store)
    if kind != _KIND_PARTITIONED:
        raise FormatError(f"{path}: unknown index kind {kind}")

    _require_normalized(store)
    offset = _RIDX_HEADER.size
    if len(raw) < offset + 8:
        raise FormatError(f"{path}: truncated partition header")
    partitions, probes = struct.unpack_from("<II", raw, offset)
    offset += 8
    cbytes = partitions * dim * 8
    abytes = count * 4
    if len(raw) != offset + cbytes + abytes:
        raise FormatError(f"{path}: payload size does not match P={partitions}, count={count}")
    centroids = (
        np.frombuffer(raw, dtype="<f8", count=partitions * dim, offset=offset)
        .reshape(partitions, dim)
        .copy()
    )
    assign = (
        np.frombuffer(raw, dtype="<u4", count=count, offset=offset + cbytes)
        .astype(np.int64)
    )
    if assign.size and (assign.min() < 0 or assign.max() >= partitions):
        raise FormatError(f"{path}: assignment outside [0, {partitions})")
    if not 1 <= probes <= partitions:
        raise FormatError(f"{path}: stored probes {probes} outside [1, {partitions}]")
    parts = [np.flatnonzero(assign == p) for p in range(partitions)]
    return PartitionedIndex(
        store=store,
        _matrix=store.as_float64(),
        centroids=centroids,
        assignments=assign,
        probes=probes,
        _partitions=parts,
    )
