"""Store file layout written by this tool."""

import numpy as np
import pytest

from embexport.errors import InputFormatError
from embexport.writer import HEADER_SIZE, file_pair, read_header, write_store_files


def test_size_arithmetic(tmp_path):
    vectors = np.arange(6, dtype="<f4").reshape(2, 3)
    remb, meta = write_store_files([("a", "x"), ("b", "y")], vectors, tmp_path / "s", True)
    assert remb.stat().st_size == HEADER_SIZE + 2 * 3 * 4
    assert len(meta.read_text().splitlines()) == 2


def test_header_round_trip(tmp_path):
    vectors = np.zeros((5, 7), dtype="<f4")
    rows = [(str(i), f"t{i}") for i in range(5)]
    remb, _ = write_store_files(rows, vectors, tmp_path / "s", normalized=False)
    header = read_header(remb)
    assert (header.dim, header.count, header.normalized) == (7, 5, False)


def test_read_header_rejects_garbage(tmp_path):
    path = tmp_path / "g.remb"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(InputFormatError):
        read_header(path)


def test_file_pair_strips_suffix(tmp_path):
    remb, meta = file_pair(tmp_path / "x.remb")
    assert remb.name == "x.remb"
    assert meta.name == "x.meta.jsonl"


def test_row_count_mismatch_rejected(tmp_path):
    with pytest.raises(InputFormatError):
        write_store_files([("a", "x")], np.zeros((2, 3), dtype="<f4"), tmp_path / "s", False)
