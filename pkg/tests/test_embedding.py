from __future__ import annotations

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from recnet.embedding import (
    CooccurrenceEmbedder,
    HashEmbedder,
    RemoteEmbedder,
    cosine,
    embedder_from_state,
    make_embedder,
)
from recnet.errors import ConfigError, DimensionMismatch, MalformedResponse, NetworkError
from recnet.model import EmbeddingVector

import oracles

vectors = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3)


def _vec(xs):
    return EmbeddingVector.from_array(np.array(xs))


def test_cosine_example():
    assert cosine(EmbeddingVector((0.6, 0.8)), EmbeddingVector((0.8, 0.6))) == pytest.approx(0.96, abs=1e-12)


def test_cosine_zero_and_dims():
    z = EmbeddingVector.zeros(2)
    assert cosine(z, EmbeddingVector((1.0, 0.0))) == 0.0
    with pytest.raises(DimensionMismatch):
        cosine(EmbeddingVector((1.0, 0.0)), EmbeddingVector((1.0, 0.0, 0.0)))


@given(vectors, vectors)
def test_cosine_symmetric_bounded_and_matches_oracle(a, b):
    va, vb = _vec(a), _vec(b)
    c = cosine(va, vb)
    assert c == cosine(vb, va)
    assert -1.0 <= c <= 1.0
    assert c == pytest.approx(oracles.cosine(va.values, vb.values), abs=1e-9)


def test_hash_embedder_deterministic_and_normalized():
    e = HashEmbedder(64, seed=3)
    v = e.embed("jazz vinyl records")
    assert v == HashEmbedder(64, seed=3).embed("jazz vinyl records")
    assert abs(sum(x * x for x in v.values) - 1.0) < 1e-9
    assert e.embed("the of and").is_zero  # stopwords only
    assert e.dim() == 64
    with pytest.raises(ValueError):
        HashEmbedder(4)


def test_cooccurrence_pulls_cooccurring_tokens_together():
    corpus = ["jazz saxophone", "jazz vinyl", "saxophone vinyl", "metal riffs", "metal guitar"]
    co = CooccurrenceEmbedder(corpus, 128)
    plain = HashEmbedder(128)
    assert cosine(co.embed("jazz"), co.embed("saxophone")) > cosine(co.embed("jazz"), co.embed("metal"))
    assert cosine(co.embed("jazz"), co.embed("saxophone")) > cosine(plain.embed("jazz"), plain.embed("saxophone"))


def test_embedder_state_round_trip():
    co = CooccurrenceEmbedder(["a1 b1", "b1 c1"], 32, seed=2)
    again = embedder_from_state(co.state())
    assert again.embed("a1 c1") == co.embed("a1 c1")
    h = make_embedder("hash", 32, 1)
    assert embedder_from_state(h.state()).embed("x1") == h.embed("x1")
    with pytest.raises(ConfigError):
        make_embedder("nope", 32, 0)


def _remote(handler, dim=3, **kw):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return RemoteEmbedder("http://emb.test/v1", "m", dim, client=client, sleep=lambda s: None, **kw)


def test_remote_embedder_retries_then_memoizes():
    calls = []

    def handler(request):
        calls.append(request)
        if len(calls) == 1:
            return httpx.Response(503)
        return httpx.Response(200, json={"data": [{"embedding": [3.0, 4.0, 0.0]}]})

    emb = _remote(handler)
    v = emb.embed("jazz")
    assert v.values == pytest.approx((0.6, 0.8, 0.0))
    assert emb.embed("jazz") is v
    assert len(calls) == 2


def test_remote_embedder_wrong_dimension():
    emb = _remote(lambda r: httpx.Response(200, json={"data": [{"embedding": [1.0, 0.0]}]}))
    with pytest.raises(MalformedResponse):
        emb.embed("x")


def test_remote_embedder_client_error_is_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400)

    with pytest.raises(NetworkError):
        _remote(handler).embed("x")
    assert len(calls) == 1


def test_remote_embedder_missing_credentials(monkeypatch):
    monkeypatch.delenv("RECNET_TEST_KEY", raising=False)
    with pytest.raises(ConfigError):
        RemoteEmbedder("http://emb.test", "m", 3, "RECNET_TEST_KEY")
    with pytest.raises(ConfigError):
        RemoteEmbedder("", "m", 3)


def test_cooccurrence_survives_cancelling_hash_collision():
    # at dim 64 "stapler" and "paper" share a bucket with opposite signs
    emb = CooccurrenceEmbedder(["stapler paper"], 64)
    v = emb.embed("stapler")
    assert not v.is_zero
    assert v == HashEmbedder(64).embed("stapler")
