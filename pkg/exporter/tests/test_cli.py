"""Exporter CLI surface and exit codes."""

import json

from embexport.cli import main
from embexport.writer import read_header


def test_corpus_command(tmp_path, capsys):
    src = tmp_path / "lines.txt"
    src.write_text("alpha sentence\nbeta sentence\n")
    rc = main(["corpus", "--input", str(src), "--encoder", "hash:16",
               "--out", str(tmp_path / "c")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "count=2" in out and "dim=16" in out and "normalized=true" in out
    assert read_header(tmp_path / "c.remb").count == 2


def test_prompts_command(tmp_path, capsys, sentiment_verbalizer):
    rc = main(["prompts", "--verbalizer", str(sentiment_verbalizer),
               "--encoder", "hash:16", "--out", str(tmp_path / "p")])
    assert rc == 0
    assert "count=8" in capsys.readouterr().out


def test_dataset_choices_command(tmp_path, capsys):
    dataset = tmp_path / "mc.jsonl"
    dataset.write_text(
        json.dumps({"id": "q0", "premise": "why", "choices": ["x", "y"], "answer": 0}) + "\n"
    )
    rc = main(["dataset", "--dataset", str(dataset), "--part", "choices",
               "--encoder", "hash:16", "--out", str(tmp_path / "ch")])
    assert rc == 0
    meta = (tmp_path / "ch.meta.jsonl").read_text().splitlines()
    rows = [json.loads(l) for l in meta]
    assert [r["id"] for r in rows] == ["q0#0", "q0#1"]
    assert rows[0]["text"] == "the answer is: x"


def test_missing_input_exit_3(tmp_path, capsys):
    rc = main(["corpus", "--input", str(tmp_path / "nope.txt"), "--encoder", "hash:8",
               "--out", str(tmp_path / "c")])
    assert rc == 3
    assert "nope.txt" in capsys.readouterr().err


def test_empty_input_exit_4(tmp_path):
    src = tmp_path / "empty.txt"
    src.write_text("\n\n")
    rc = main(["corpus", "--input", str(src), "--encoder", "hash:8",
               "--out", str(tmp_path / "c")])
    assert rc == 4


def test_bad_batch_size_exit_2(tmp_path):
    src = tmp_path / "lines.txt"
    src.write_text("one line\n")
    rc = main(["corpus", "--input", str(src), "--encoder", "hash:8",
               "--out", str(tmp_path / "c"), "--batch-size", "0"])
    assert rc == 2


def test_encoder_failure_exit_5(tmp_path, monkeypatch):
    monkeypatch.setenv("HF_HUB_OFFLINE", "1")  # skip hub retry loops
    src = tmp_path / "lines.txt"
    src.write_text("one line\n")
    rc = main(["corpus", "--input", str(src), "--encoder", "no/such-model",
               "--out", str(tmp_path / "c")])
    assert rc == 5
