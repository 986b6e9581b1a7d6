"""Embedding backends and cosine similarity.

Three backends share the ``embed(text) / dim()`` surface:

* :class:`HashEmbedder` -- signed feature hashing of content tokens.
* :class:`CooccurrenceEmbedder` -- hashing plus random-indexing context
  vectors fitted once on a corpus, so tokens that co-occur become similar.
* :class:`RemoteEmbedder` -- an HTTP embeddings endpoint with memoization.
"""

from __future__ import annotations

import hashlib
import logging
import os
import threading
import time
from collections import defaultdict
from typing import Callable, Iterable, Protocol

import httpx
import numpy as np

from .errors import ConfigError, DimensionMismatch, MalformedResponse, NetworkError
from .model import EmbeddingVector
from .text import content_tokens

log = logging.getLogger(__name__)

DEFAULT_DIM = 256


class EmbeddingBackend(Protocol):
    def embed(self, text: str) -> EmbeddingVector: ...

    def dim(self) -> int: ...


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatch(f"{a.dim} != {b.dim}")
    x, y = a.array, b.array
    nx = float(np.sqrt(x @ x))
    ny = float(np.sqrt(y @ y))
    if nx == 0.0 or ny == 0.0:
        return 0.0
    value = float(x @ y) / (nx * ny)
    return min(1.0, max(-1.0, value))


def token_bucket(token: str, dim: int, seed: int) -> tuple[int, float]:
    digest = hashlib.blake2b(f"{seed}\x1f{token}".encode("utf-8"), digest_size=8).digest()
    h = int.from_bytes(digest, "little")
    return (h >> 1) % dim, (1.0 if h & 1 else -1.0)


def hash_accumulator(text: str, dim: int, seed: int) -> np.ndarray:
    acc = np.zeros(dim, dtype=np.float64)
    for tok in content_tokens(text):
        idx, sign = token_bucket(tok, dim, seed)
        acc[idx] += sign
    return acc


def embed_feature_hash(text: str, dim: int = DEFAULT_DIM, seed: int = 0) -> EmbeddingVector:
    if dim < 8:
        raise ValueError("dim must be >= 8")
    return EmbeddingVector.from_array(hash_accumulator(text, dim, seed))


class _Memo:
    def __init__(self) -> None:
        self._cache: dict[str, EmbeddingVector] = {}
        self._lock = threading.Lock()

    def get(self, text: str) -> EmbeddingVector | None:
        with self._lock:
            return self._cache.get(text)

    def put(self, text: str, vec: EmbeddingVector) -> None:
        with self._lock:
            self._cache[text] = vec

    def __len__(self) -> int:
        return len(self._cache)


class HashEmbedder:
    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0) -> None:
        if dim < 8:
            raise ValueError("dim must be >= 8")
        self._dim = dim
        self.seed = seed
        self._memo = _Memo()

    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> EmbeddingVector:
        hit = self._memo.get(text)
        if hit is None:
            hit = embed_feature_hash(text, self._dim, self.seed)
            self._memo.put(text, hit)
        return hit

    def state(self) -> dict:
        return {"kind": "hash", "dim": self._dim, "seed": self.seed}


class CooccurrenceEmbedder:
    """Feature hashing where each token also carries its corpus context.

    A token's vector is ``h(t) + w * normalize(sum of h(t') over documents
    containing t, t' != t)``, normalized; texts are sums of token vectors.
    The corpus is fixed at construction, so ``embed`` stays a pure function.
    """

    def __init__(
        self,
        corpus: Iterable[str],
        dim: int = DEFAULT_DIM,
        seed: int = 0,
        context_weight: float = 1.0,
    ) -> None:
        if dim < 8:
            raise ValueError("dim must be >= 8")
        self._dim = dim
        self.seed = seed
        self.context_weight = context_weight
        self.corpus = tuple(corpus)
        self._memo = _Memo()
        self._token_vecs: dict[str, np.ndarray] = {}
        self._fit()

    def _base(self, token: str) -> np.ndarray:
        v = np.zeros(self._dim)
        idx, sign = token_bucket(token, self._dim, self.seed)
        v[idx] = sign
        return v

    def _fit(self) -> None:
        context: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(self._dim))
        for doc in self.corpus:
            toks = sorted(set(content_tokens(doc)))
            if len(toks) < 2:
                continue
            bases = {t: self._base(t) for t in toks}
            total = sum(bases.values())
            for t in toks:
                context[t] += total - bases[t]
        for tok in sorted(context):
            ctx = context[tok]
            norm = np.linalg.norm(ctx)
            if norm == 0.0:
                continue
            vec = self._base(tok) + self.context_weight * ctx / norm
            vnorm = np.linalg.norm(vec)
            if vnorm == 0.0:  # context exactly cancels the token's own bucket
                continue
            self._token_vecs[tok] = vec / vnorm

    def dim(self) -> int:
        return self._dim

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._token_vecs.get(token)
        return vec if vec is not None else self._base(token)

    def embed(self, text: str) -> EmbeddingVector:
        hit = self._memo.get(text)
        if hit is None:
            acc = np.zeros(self._dim)
            for tok in content_tokens(text):
                acc += self.token_vector(tok)
            hit = EmbeddingVector.from_array(acc)
            self._memo.put(text, hit)
        return hit

    def state(self) -> dict:
        return {
            "kind": "cooccurrence",
            "dim": self._dim,
            "seed": self.seed,
            "context_weight": self.context_weight,
            "corpus": list(self.corpus),
        }


class RemoteEmbedder:
    """POSTs ``{"input": [text], "model": ...}`` and reads ``data[0].embedding``."""

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        api_key_env: str | None = None,
        *,
        client: httpx.Client | None = None,
        max_attempts: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
        timeout: float = 30.0,
    ) -> None:
        if not base_url:
            raise ConfigError("remote embedder needs a base_url")
        self.api_key = None
        if api_key_env:
            self.api_key = os.environ.get(api_key_env)
            if not self.api_key:
                raise ConfigError(f"environment variable {api_key_env} is not set")
        self.url = base_url.rstrip("/") + "/embeddings"
        self.model = model
        self._dim = dim
        self.client = client or httpx.Client(timeout=timeout)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.sleep = sleep
        self.http_calls = 0
        self._memo = _Memo()

    def dim(self) -> int:
        return self._dim

    def _post(self, text: str) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            self.http_calls += 1
            try:
                resp = self.client.post(
                    self.url, json={"input": [text], "model": self.model}, headers=headers
                )
            except httpx.TransportError as exc:
                last = exc
            else:
                if resp.status_code < 500 and resp.status_code != 429:
                    if resp.status_code >= 400:
                        raise NetworkError(f"embedding endpoint returned {resp.status_code}")
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise MalformedResponse("embedding response is not JSON") from exc
                last = NetworkError(f"embedding endpoint returned {resp.status_code}")
            if attempt + 1 < self.max_attempts:
                delay = self.backoff * (2**attempt)
                log.warning("embedding call failed (%s); retrying in %.2fs", last, delay)
                self.sleep(delay)
        raise NetworkError(f"embedding request failed after {self.max_attempts} attempts: {last}")

    def embed(self, text: str) -> EmbeddingVector:
        hit = self._memo.get(text)
        if hit is not None:
            return hit
        body = self._post(text)
        try:
            values = body["data"][0]["embedding"]
            arr = np.asarray(values, dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"unexpected embedding payload: {exc}") from exc
        if arr.ndim != 1 or arr.size != self._dim:
            raise MalformedResponse(f"expected dim {self._dim}, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise MalformedResponse("embedding contains non-finite values")
        vec = EmbeddingVector.from_array(arr)
        self._memo.put(text, vec)
        return vec

    def state(self) -> dict:
        return {"kind": "remote", "dim": self._dim, "model": self.model}


def make_embedder(kind: str, dim: int, seed: int, corpus: Iterable[str] = (), **remote) -> EmbeddingBackend:
    if kind == "hash":
        return HashEmbedder(dim, seed)
    if kind == "cooccurrence":
        return CooccurrenceEmbedder(corpus, dim, seed)
    if kind == "remote":
        return RemoteEmbedder(dim=dim, **remote)
    raise ConfigError(f"unknown embedder {kind!r}")


def embedder_from_state(state: dict) -> EmbeddingBackend:
    kind = state["kind"]
    if kind == "hash":
        return HashEmbedder(state["dim"], state["seed"])
    if kind == "cooccurrence":
        return CooccurrenceEmbedder(
            state["corpus"], state["dim"], state["seed"], state["context_weight"]
        )
    raise ConfigError(f"cannot restore a {kind!r} embedder from a snapshot")
