"""Attribute normalization, tokenization and the mock extraction rules."""

from __future__ import annotations

import unicodedata
from functools import lru_cache
from importlib import resources
from typing import Iterable

from .errors import EmptyAfterNormalization

MAX_ATTRIBUTES = 32


def _clean(raw: str) -> str:
    text = unicodedata.normalize("NFC", raw).lower()
    # Anything that is not a letter, digit or whitespace becomes a space.
    chars = [ch if ch.isalnum() or ch.isspace() else " " for ch in text]
    return " ".join("".join(chars).split())


def normalize_attribute(raw: str) -> str:
    """Return the canonical attribute text for ``raw``.

    Raises EmptyAfterNormalization when nothing survives (e.g. punctuation only).
    """
    text = _clean(raw)
    if not text:
        raise EmptyAfterNormalization(f"attribute {raw!r} is empty after normalization")
    return text


def is_normalized(text: str) -> bool:
    return bool(text) and _clean(text) == text


def tokenize(text: str) -> list[str]:
    return _clean(text).split()


@lru_cache(maxsize=1)
def _default_stopwords() -> frozenset[str]:
    raw = resources.files("recnet.data").joinpath("stopwords.txt").read_text("utf-8")
    return frozenset(
        line.strip() for line in raw.splitlines() if line.strip() and not line.startswith("#")
    )


_override: frozenset[str] | None = None


def stopwords() -> frozenset[str]:
    return _override if _override is not None else _default_stopwords()


def set_stopwords(words: Iterable[str] | None) -> None:
    """Replace the active stopword list (``None`` restores the shipped list)."""
    global _override
    _override = None if words is None else frozenset(_clean(w) for w in words)
    _extract_cached.cache_clear()


@lru_cache(maxsize=65536)
def _extract_cached(text: str, cap: int) -> tuple[str, ...]:
    stop = stopwords()
    seen: dict[str, None] = {}
    for tok in tokenize(text):
        if tok in stop or tok in seen:
            continue
        seen[tok] = None
        if len(seen) >= cap:
            break
    return tuple(seen)


def extract_tokens(text: str, cap: int = MAX_ATTRIBUTES) -> tuple[str, ...]:
    """Distinct non-stopword tokens of ``text`` in first-occurrence order, capped."""
    if cap <= 0:
        return ()
    return _extract_cached(text, cap)


def content_tokens(text: str) -> list[str]:
    """All non-stopword tokens, with repetition (embedding input)."""
    stop = stopwords()
    return [t for t in tokenize(text) if t not in stop]


def render_interests(tokens: Iterable[str], prefix: str = "interests") -> str:
    toks = list(tokens)
    if not toks:
        return ""
    return f"{prefix}: " + ", ".join(toks)


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    sa, sb = set(a), set(b)
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)
