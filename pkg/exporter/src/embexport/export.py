"""Export embeddings for datasets, verbalizer prompts, and raw corpora.

Every export runs a startup smoke check: the first (up to) 16 texts are
encoded at batch size 1 and at the requested batch size, and the two
results must agree. Batch size may change throughput, never output.

Corpus exports write in chunks and can resume: the header (with the final
count) goes first, completed rows are counted from the partial file size,
and encoding continues from there, yielding a file bit-identical to an
uninterrupted run for any deterministic encoder.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import writer
from .errors import InputFormatError, InputValidationError, UsageError

log = logging.getLogger("embexport")

#: Tolerance for the batch-size-independence smoke check; covers float32
#: reduction-order wiggle in real encoders (exact for the hash encoder).
BATCH_SMOKE_ATOL = 1e-5
SMOKE_SET_SIZE = 16
DEFAULT_CHUNK_ROWS = 1024


@dataclass
class ExportJob:
    encoder: object
    rows: list[tuple[str, str]]  # (id, text), in output order
    out_path: str | Path
    batch_size: int = 32
    normalize: bool = True


def _batch_independence_check(encoder, texts: list[str], batch_size: int) -> None:
    smoke = texts[:SMOKE_SET_SIZE]
    if not smoke or batch_size == 1:
        return
    one = encoder.encode(smoke, batch_size=1)
    many = encoder.encode(smoke, batch_size=batch_size)
    if not np.allclose(one, many, atol=BATCH_SMOKE_ATOL):
        worst = float(np.max(np.abs(one.astype(np.float64) - many.astype(np.float64))))
        raise InputValidationError(
            f"encoder output depends on batch size (max deviation {worst:.3e}); "
            "refusing to export"
        )


def _normalize_rows(matrix: np.ndarray, ids: list[str]) -> np.ndarray:
    vec = matrix.astype(np.float64)
    norms = np.linalg.norm(vec, axis=1)
    tiny = np.flatnonzero(norms < 1e-12)
    if tiny.size:
        raise InputValidationError(
            f"encoder produced a zero vector for row id {ids[int(tiny[0])]!r}"
        )
    return (vec / norms[:, None]).astype("<f4")


def _validate_rows(rows: list[tuple[str, str]]) -> None:
    if not rows:
        raise InputValidationError("nothing to export: input is empty")
    seen: set[str] = set()
    for row_id, text in rows:
        if row_id in seen:
            raise InputValidationError(f"duplicate row id {row_id!r}")
        seen.add(row_id)
        if not text:
            raise InputValidationError(f"row {row_id!r} has empty text")


def export_texts(job: ExportJob) -> tuple[Path, Path]:
    """Encode every row and write the store pair in one pass."""
    _validate_rows(job.rows)
    ids = [r[0] for r in job.rows]
    texts = [r[1] for r in job.rows]
    _batch_independence_check(job.encoder, texts, job.batch_size)
    matrix = job.encoder.encode(texts, batch_size=job.batch_size)
    matrix = np.asarray(matrix, dtype="<f4")
    if not np.all(np.isfinite(matrix)):
        raise InputValidationError("encoder produced non-finite components")
    if job.normalize:
        matrix = _normalize_rows(matrix, ids)
    return writer.write_store_files(job.rows, matrix, job.out_path, job.normalize)


def export_corpus(
    job: ExportJob,
    resume: bool = False,
    chunk_rows: int = DEFAULT_CHUNK_ROWS,
) -> tuple[Path, Path]:
    """Chunked, resumable export for large sentence-per-line corpora."""
    _validate_rows(job.rows)
    ids = [r[0] for r in job.rows]
    texts = [r[1] for r in job.rows]
    _batch_independence_check(job.encoder, texts, job.batch_size)
    dim = job.encoder.dim
    total = len(job.rows)
    remb_path, meta_path = writer.file_pair(job.out_path)
    row_bytes = dim * 4

    done = 0
    if resume and remb_path.exists():
        header = writer.read_header(remb_path)
        if header.dim != dim or header.count != total or header.normalized != job.normalize:
            raise InputValidationError(
                f"{remb_path}: existing partial file was written for a different job "
                f"(dim {header.dim}, count {header.count}, normalized {header.normalized})"
            )
        payload = remb_path.stat().st_size - writer.HEADER_SIZE
        done = min(payload // row_bytes, total)
        with open(remb_path, "r+b") as fh:
            fh.truncate(writer.HEADER_SIZE + done * row_bytes)
        meta_lines = []
        if meta_path.exists():
            meta_lines = meta_path.read_text(encoding="utf-8").splitlines(keepends=True)
        meta_path.write_text("".join(meta_lines[:done]), encoding="utf-8")
        log.info("resuming at row %d of %d", done, total)
    else:
        with open(remb_path, "wb") as fh:
            fh.write(writer.pack_header(dim, total, job.normalize))
        meta_path.write_text("", encoding="utf-8")

    with open(remb_path, "ab") as vec_fh, open(meta_path, "a", encoding="utf-8") as meta_fh:
        for start in range(done, total, chunk_rows):
            stop = min(start + chunk_rows, total)
            matrix = job.encoder.encode(texts[start:stop], batch_size=job.batch_size)
            matrix = np.asarray(matrix, dtype="<f4")
            if not np.all(np.isfinite(matrix)):
                raise InputValidationError(
                    f"encoder produced non-finite components in rows {start}..{stop}"
                )
            if job.normalize:
                matrix = _normalize_rows(matrix, ids[start:stop])
            vec_fh.write(matrix.tobytes(order="C"))
            for row_id, text in job.rows[start:stop]:
                meta_fh.write(writer.meta_line(row_id, text))
            vec_fh.flush()
            meta_fh.flush()

    expected = writer.HEADER_SIZE + total * row_bytes
    actual = remb_path.stat().st_size
    if actual != expected:
        raise InputValidationError(f"{remb_path}: wrote {actual} bytes, expected {expected}")
    return remb_path, meta_path


# ---------------------------------------------------------------------------
# Text sources


def rows_from_lines(path: str | Path) -> list[tuple[str, str]]:
    """One row per non-empty line; ids are 1-based source line numbers.

    Empty lines are skipped with a warning, leaving a gap in the id
    sequence so provenance stays recoverable.
    """
    path = Path(path)
    if not path.exists():
        raise InputFormatError(f"missing file: {path}")
    rows: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.rstrip("\n")
            if not text.strip():
                log.warning("%s:%d: empty line skipped, id %d left unused", path, lineno, lineno)
                continue
            rows.append((str(lineno), text))
    return rows


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        raise InputFormatError(f"missing file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            rows.append(obj)
    return rows


def rows_from_closed_set(path: str | Path) -> list[tuple[str, str]]:
    rows = []
    for i, obj in enumerate(_read_jsonl(Path(path))):
        if "id" not in obj or "text" not in obj:
            raise InputFormatError(f"{path}: row {i} needs id and text")
        rows.append((str(obj["id"]), str(obj["text"])))
    return rows


def rows_from_premises(path: str | Path) -> list[tuple[str, str]]:
    rows = []
    for i, obj in enumerate(_read_jsonl(Path(path))):
        if "id" not in obj or "premise" not in obj:
            raise InputFormatError(f"{path}: row {i} needs id and premise")
        rows.append((str(obj["id"]), str(obj["premise"])))
    return rows


def rows_from_choices(path: str | Path, answer_template: str) -> list[tuple[str, str]]:
    """Flatten choices as ``<id>#<j>`` rows, rendered through the answer
    template (e.g. ``the answer is: {label}``)."""
    if answer_template.count("{label}") != 1:
        raise UsageError(f"answer template must contain {{label}} exactly once")
    rows = []
    for i, obj in enumerate(_read_jsonl(Path(path))):
        for key in ("id", "choices"):
            if key not in obj:
                raise InputFormatError(f"{path}: row {i} needs {key!r}")
        for j, choice in enumerate(obj["choices"]):
            rows.append(
                (f"{obj['id']}#{j}", answer_template.replace("{label}", str(choice)))
            )
    return rows


def rows_from_verbalizer(path: str | Path, include_synonyms: bool = False) -> list[tuple[str, str]]:
    """Rendered prompts for every template x label; synonym-substituted
    variants are added when requested (needed for multi-synonym retrieval).
    """
    path = Path(path)
    if not path.exists():
        raise InputFormatError(f"missing file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: invalid JSON: {exc}") from exc
    for key in ("templates", "labels"):
        if key not in doc:
            raise InputFormatError(f"{path}: missing key {key!r}")
    rows: list[tuple[str, str]] = []
    seen_texts: set[str] = set()
    for t, template in enumerate(doc["templates"]):
        template = str(template)
        if template.count("{label}") != 1:
            raise InputFormatError(f"{path}: template {template!r} needs one {{label}}")
        for lab in doc["labels"]:
            c = int(lab["class_index"])
            words = [str(lab["name"])]
            if include_synonyms:
                words += [str(s) for s in lab.get("synonyms", [])]
            for j, word in enumerate(words):
                text = template.replace("{label}", word)
                if text in seen_texts:
                    continue
                seen_texts.add(text)
                suffix = "" if j == 0 else f"_s{j}"
                rows.append((f"t{t}_l{c}{suffix}", text))
    return rows


def print_summary(remb_path: Path, count: int, dim: int, normalized: bool) -> None:
    print(
        f"count={count} dim={dim} normalized={'true' if normalized else 'false'} "
        f"out={remb_path}",
        file=sys.stdout,
    )
