"""Built-in hash encoder behavior and encoder resolution."""

import numpy as np
import pytest

from embexport.encoders import HashedTrigramEncoder, resolve_encoder
from embexport.errors import EncoderError


def test_deterministic_across_instances():
    a = HashedTrigramEncoder(64).encode(["hello world", "again"])
    b = HashedTrigramEncoder(64).encode(["hello world", "again"])
    assert np.array_equal(a, b)


def test_identical_texts_identical_rows():
    out = HashedTrigramEncoder(32).encode(["same text", "same text"])
    assert np.array_equal(out[0], out[1])


def test_distinct_texts_distinct_rows():
    out = HashedTrigramEncoder(128).encode(["first sentence", "second sentence"])
    assert not np.array_equal(out[0], out[1])


def test_batch_size_is_exactly_irrelevant():
    texts = [f"sentence number {i}" for i in range(20)]
    enc = HashedTrigramEncoder(48)
    assert np.array_equal(enc.encode(texts, batch_size=1), enc.encode(texts, batch_size=7))


def test_short_and_empty_ish_texts_encode():
    out = HashedTrigramEncoder(16).encode(["a", "xy", "!"])
    assert np.all(np.isfinite(out))
    assert np.all(np.linalg.norm(out, axis=1) > 0)


def test_resolve_hash_spec():
    enc = resolve_encoder("hash:24")
    assert enc.dim == 24


def test_resolve_bad_hash_spec():
    with pytest.raises(EncoderError):
        resolve_encoder("hash:notanumber")


def test_resolve_missing_checkpoint_fails_cleanly(monkeypatch):
    monkeypatch.setenv("HF_HUB_OFFLINE", "1")  # skip hub retry loops
    with pytest.raises(EncoderError):
        resolve_encoder("definitely/not-a-real-checkpoint-anywhere")
