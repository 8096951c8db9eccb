"""Standalone writer/reader for the ``.remb`` + ``.meta.jsonl`` store pair.

Implements the published layout directly so this tool has no import
dependency on the engine that consumes the files:

  bytes 0-3    magic ``REMB``
  bytes 4-5    version u16 = 1
  byte  6      flags, bit 0 = normalized
  byte  7      reserved 0
  bytes 8-11   dim u32
  bytes 12-19  count u64
  rest         count * dim float32 little-endian, row-major

Metadata: one ``{"id": ..., "text": ...}`` JSON object per row.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputFormatError

MAGIC = b"REMB"
VERSION = 1
FLAG_NORMALIZED = 0x01
HEADER = struct.Struct("<4sHBBIQ")
HEADER_SIZE = HEADER.size


def file_pair(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix == ".remb":
        p = p.with_suffix("")
    return p.with_name(p.name + ".remb"), p.with_name(p.name + ".meta.jsonl")


def pack_header(dim: int, count: int, normalized: bool) -> bytes:
    flags = FLAG_NORMALIZED if normalized else 0
    return HEADER.pack(MAGIC, VERSION, flags, 0, dim, count)


@dataclass
class RembHeader:
    dim: int
    count: int
    normalized: bool


def read_header(remb_path: Path) -> RembHeader:
    raw = remb_path.read_bytes()[:HEADER_SIZE]
    if len(raw) < HEADER_SIZE:
        raise InputFormatError(f"{remb_path}: truncated header")
    magic, version, flags, _reserved, dim, count = HEADER.unpack(raw)
    if magic != MAGIC or version != VERSION:
        raise InputFormatError(f"{remb_path}: not a version-{VERSION} store file")
    return RembHeader(dim=dim, count=count, normalized=bool(flags & FLAG_NORMALIZED))


def meta_line(row_id: str, text: str) -> str:
    return json.dumps({"id": row_id, "text": text}, ensure_ascii=False) + "\n"


def write_store_files(
    rows: list[tuple[str, str]],
    vectors: np.ndarray,
    path: str | Path,
    normalized: bool,
) -> tuple[Path, Path]:
    """Write a complete store in one shot (non-resumable path)."""
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    count, dim = vectors.shape
    if len(rows) != count:
        raise InputFormatError(f"{len(rows)} metadata rows for {count} vectors")
    remb_path, meta_path = file_pair(path)
    with open(remb_path, "wb") as fh:
        fh.write(pack_header(dim, count, normalized))
        fh.write(vectors.tobytes(order="C"))
    with open(meta_path, "w", encoding="utf-8") as fh:
        for row_id, text in rows:
            fh.write(meta_line(row_id, text))
    return remb_path, meta_path
