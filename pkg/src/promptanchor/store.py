"""Portable embedding file format and in-memory store.

A store is a pair of files sharing a stem:

  <stem>.remb        binary vectors (layout below)
  <stem>.meta.jsonl  one JSON object per row, exactly {"id": ..., "text": ...}

``.remb`` layout, all integers little-endian:

  bytes 0-3    magic ``REMB``
  bytes 4-5    format version, u16, currently 1
  byte  6      flags, bit 0 = vectors are unit-normalized
  byte  7     reserved, must be 0
  bytes 8-11   dim, u32
  bytes 12-19  count, u64
  rest         count * dim IEEE-754 float32 values, row-major

Vectors are single precision at rest; every computation on them here is
done in double precision. Normalization happens once, explicitly, via
:func:`normalize_store`; nothing in this package renormalizes silently.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"REMB"
FORMAT_VERSION = 1
FLAG_NORMALIZED = 0x01
HEADER = struct.Struct("<4sHBBIQ")
HEADER_SIZE = HEADER.size  # 20 bytes

#: Maximum deviation from 1.0 tolerated for a vector flagged as normalized.
NORM_TOLERANCE = 1e-4
#: Below this Euclidean norm a vector has no usable direction.
ZERO_NORM_THRESHOLD = 1e-12


@dataclass
class EmbeddingRecord:
    """One row to be written: an id, its source text, and the vector."""

    id: str
    text: str
    vector: Sequence[float]


@dataclass
class EmbeddingStore:
    """Ordered collection of embeddings with row-aligned (id, text) metadata.

    Instances are treated as immutable once constructed; the vector matrix
    is marked read-only so a loaded store can be shared across threads.
    """

    dim: int
    vectors: np.ndarray
    metadata: list[tuple[str, str]]
    normalized: bool = False
    _id_rows: dict[str, int] | None = field(default=None, repr=False, compare=False)
    _text_rows: dict[str, int] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype="<f4").reshape(-1, self.dim)
        self.vectors.setflags(write=False)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def ids(self) -> list[str]:
        return [m[0] for m in self.metadata]

    @property
    def texts(self) -> list[str]:
        return [m[1] for m in self.metadata]

    def row_for_id(self, record_id: str) -> int | None:
        if self._id_rows is None:
            self._id_rows = {}
            for i, (rid, _) in enumerate(self.metadata):
                self._id_rows.setdefault(rid, i)
        return self._id_rows.get(record_id)

    def row_for_text(self, text: str) -> int | None:
        """Row of the first record with this exact text, or None."""
        if self._text_rows is None:
            self._text_rows = {}
            for i, (_, t) in enumerate(self.metadata):
                self._text_rows.setdefault(t, i)
        return self._text_rows.get(text)

    def as_float64(self) -> np.ndarray:
        """A fresh double-precision copy of the vector matrix."""
        return np.ascontiguousarray(self.vectors, dtype=np.float64)


@dataclass
class ValidationIssue:
    row: int | None
    id: str | None
    kind: str
    message: str


@dataclass
class ValidationReport:
    issues: list[ValidationIssue]

    @property
    def ok(self) -> bool:
        return not self.issues

    def summary(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(i.message for i in self.issues)


def store_from_vectors(
    vectors: np.ndarray,
    ids: Sequence[str] | None = None,
    texts: Sequence[str] | None = None,
    normalized: bool = False,
) -> EmbeddingStore:
    """Build a store from a matrix, generating row ids/texts when omitted."""
    vectors = np.asarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise ValidationError("vectors must be a 2-d matrix")
    count, dim = vectors.shape
    if ids is None:
        ids = [str(i) for i in range(count)]
    if texts is None:
        texts = ["" for _ in range(count)]
    if len(ids) != count or len(texts) != count:
        raise ValidationError("ids/texts length does not match vector count")
    metadata = list(zip([str(i) for i in ids], [str(t) for t in texts]))
    return EmbeddingStore(dim=dim, vectors=vectors, metadata=metadata, normalized=normalized)


def _file_pair(path: str | Path) -> tuple[Path, Path]:
    """Resolve a stem (or a ``.remb`` path) to the (remb, meta) file pair."""
    p = Path(path)
    if p.suffix == ".remb":
        p = p.with_suffix("")
    return p.with_name(p.name + ".remb"), p.with_name(p.name + ".meta.jsonl")


def write_embedding_file(
    records: Iterable[EmbeddingRecord],
    dim: int,
    path: str | Path,
    normalized: bool = False,
) -> tuple[Path, Path]:
    """Write records to ``<path>.remb`` + ``<path>.meta.jsonl``.

    Args:
        records: rows to write; every vector must have exactly ``dim``
            finite components and ids must be unique.
        dim: embedding dimension, must be positive.
        path: output stem (a trailing ``.remb`` suffix is stripped).
        normalized: set the header flag; when true every vector's norm is
            verified to be within ``NORM_TOLERANCE`` of 1.

    Returns:
        The (remb_path, meta_path) pair actually written.
    """
    if dim < 1:
        raise ValidationError(f"dim must be positive, got {dim}")
    records = list(records)
    seen: set[str] = set()
    rows = np.zeros((len(records), dim), dtype="<f4")
    for i, rec in enumerate(records):
        vec = np.asarray(rec.vector, dtype=np.float64)
        if vec.shape != (dim,):
            raise ValidationError(
                f"record {rec.id!r}: vector has {vec.size} components, expected dim {dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise ValidationError(f"record {rec.id!r}: vector contains a non-finite component")
        if rec.id in seen:
            raise ValidationError(f"duplicate record id {rec.id!r}")
        seen.add(rec.id)
        if normalized:
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > NORM_TOLERANCE:
                raise ValidationError(
                    f"record {rec.id!r}: norm {norm:.6g} but store is flagged normalized"
                )
        rows[i] = vec.astype("<f4")

    remb_path, meta_path = _file_pair(path)
    flags = FLAG_NORMALIZED if normalized else 0
    header = HEADER.pack(MAGIC, FORMAT_VERSION, flags, 0, dim, len(records))
    with open(remb_path, "wb") as fh:
        fh.write(header)
        fh.write(rows.tobytes(order="C"))
    with open(meta_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"id": rec.id, "text": rec.text}, ensure_ascii=False))
            fh.write("\n")
    return remb_path, meta_path


def write_store(store: EmbeddingStore, path: str | Path) -> tuple[Path, Path]:
    """Persist an in-memory store as a file pair."""
    records = [
        EmbeddingRecord(id=rid, text=text, vector=store.vectors[i])
        for i, (rid, text) in enumerate(store.metadata)
    ]
    return write_embedding_file(records, store.dim, path, normalized=store.normalized)


def read_embedding_file(path: str | Path) -> EmbeddingStore:
    """Load a store, verifying structure and the header's normalized claim.

    Raises:
        FormatError: missing file, bad magic/version, payload or metadata
            length inconsistent with the header, malformed metadata lines,
            duplicate ids, or a norm violating the normalized flag.
    """
    remb_path, meta_path = _file_pair(path)
    for p in (remb_path, meta_path):
        if not p.exists():
            raise FormatError(f"missing file: {p}")

    raw = remb_path.read_bytes()
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{remb_path}: truncated header ({len(raw)} bytes)")
    magic, version, flags, reserved, dim, count = HEADER.unpack(raw[:HEADER_SIZE])
    if magic != MAGIC:
        raise FormatError(f"{remb_path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{remb_path}: unsupported format version {version}")
    if flags & ~FLAG_NORMALIZED:
        raise FormatError(f"{remb_path}: unsupported flag bits 0x{flags:02x}")
    if reserved != 0:
        raise FormatError(f"{remb_path}: reserved header byte is 0x{reserved:02x}")
    if dim < 1:
        raise FormatError(f"{remb_path}: non-positive dim {dim}")

    expected = count * dim * 4
    payload = raw[HEADER_SIZE:]
    if len(payload) != expected:
        raise FormatError(
            f"{remb_path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim)

    metadata: list[tuple[str, str]] = []
    seen: set[str] = set()
    with open(meta_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.rstrip("\n")
            if lineno >= count:
                raise FormatError(f"{meta_path}: more metadata lines than header count {count}")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{meta_path}:{lineno + 1}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or set(obj) != {"id", "text"}:
                raise FormatError(f"{meta_path}:{lineno + 1}: object must have exactly id, text")
            if not isinstance(obj["id"], str) or not isinstance(obj["text"], str):
                raise FormatError(f"{meta_path}:{lineno + 1}: id and text must be strings")
            if obj["id"] in seen:
                raise FormatError(f"{meta_path}:{lineno + 1}: duplicate id {obj['id']!r}")
            seen.add(obj["id"])
            metadata.append((obj["id"], obj["text"]))
    if len(metadata) != count:
        raise FormatError(
            f"{meta_path}: {len(metadata)} metadata lines, header count is {count}"
        )

    normalized = bool(flags & FLAG_NORMALIZED)
    if normalized and count:
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)
        if bad.size:
            row = int(bad[0])
            raise FormatError(
                f"{remb_path}: flagged normalized but row {row} (id {metadata[row][0]!r}) "
                f"has norm {norms[row]:.6g}"
            )
    return EmbeddingStore(dim=dim, vectors=vectors, metadata=metadata, normalized=normalized)


def normalize_store(store: EmbeddingStore) -> EmbeddingStore:
    """Return a copy of the store with every vector scaled to unit norm.

    Norms are computed in double precision; the result is rounded back to
    single precision, so re-applying changes each component by < 1e-6.
    Rows with norm below ``ZERO_NORM_THRESHOLD`` are rejected by row id.
    """
    vec = store.as_float64()
    if store.count:
        norms = np.linalg.norm(vec, axis=1)
        tiny = np.flatnonzero(norms < ZERO_NORM_THRESHOLD)
        if tiny.size:
            row = int(tiny[0])
            raise ValidationError(
                f"cannot normalize row {row} (id {store.metadata[row][0]!r}): "
                f"norm {norms[row]:.3g} is below {ZERO_NORM_THRESHOLD}"
            )
        vec = vec / norms[:, None]
    return EmbeddingStore(
        dim=store.dim,
        vectors=vec.astype("<f4"),
        metadata=list(store.metadata),
        normalized=True,
    )


def validate_store(store: EmbeddingStore) -> ValidationReport:
    """Report every invariant violation; never raises.

    Checks: metadata length, duplicate ids, non-finite components, and,
    when the normalized flag is set, per-row norms within NORM_TOLERANCE.
    """
    issues: list[ValidationIssue] = []
    if len(store.metadata) != store.count:
        issues.append(
            ValidationIssue(
                row=None,
                id=None,
                kind="metadata_length",
                message=(
                    f"metadata has {len(store.metadata)} entries, store count is {store.count}"
                ),
            )
        )
    seen: dict[str, int] = {}
    for i, (rid, _) in enumerate(store.metadata):
        if rid in seen:
            issues.append(
                ValidationIssue(
                    row=i,
                    id=rid,
                    kind="duplicate_id",
                    message=f"row {i}: id {rid!r} already used by row {seen[rid]}",
                )
            )
        else:
            seen[rid] = i

    if store.count:
        vec = store.as_float64()
        finite = np.isfinite(vec).all(axis=1)
        for row in np.flatnonzero(~finite):
            row = int(row)
            rid = store.metadata[row][0] if row < len(store.metadata) else None
            issues.append(
                ValidationIssue(
                    row=row,
                    id=rid,
                    kind="non_finite",
                    message=f"row {row} (id {rid!r}) contains a non-finite component",
                )
            )
        if store.normalized:
            norms = np.linalg.norm(vec, axis=1)
            for row in np.flatnonzero(np.abs(norms - 1.0) > NORM_TOLERANCE):
                row = int(row)
                if not finite[row]:
                    continue
                rid = store.metadata[row][0] if row < len(store.metadata) else None
                issues.append(
                    ValidationIssue(
                        row=row,
                        id=rid,
                        kind="norm",
                        message=(
                            f"row {row} (id {rid!r}) has norm {norms[row]:.6g}, "
                            "store is flagged normalized"
                        ),
                    )
                )
    return ValidationReport(issues=issues)
