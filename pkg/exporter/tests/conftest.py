"""Shared bits for exporter tests."""

import json
from pathlib import Path

import pytest

SENTIMENT_VERBALIZER = {
    "task_kind": "closed_set",
    "templates": [
        "A {label} one.",
        "It was {label}.",
        "All in all {label}.",
        "A {label} piece.",
    ],
    "labels": [
        {"class_index": 0, "name": "terrible",
         "synonyms": ["horrible", "awful", "dreadful", "bad"]},
        {"class_index": 1, "name": "great",
         "synonyms": ["good", "famous", "remarkable", "awesome"]},
    ],
}


@pytest.fixture
def sentiment_verbalizer(tmp_path) -> Path:
    path = tmp_path / "verbalizer.json"
    path.write_text(json.dumps(SENTIMENT_VERBALIZER, indent=2))
    return path
