"""Interaction datasets: JSONL ingestion, five-core filtering, sampling, stats."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ..errors import MissingField, ParseError

FORMATS = {
    "internal": {
        "user": "user",
        "item": "item",
        "timestamp": "timestamp",
        "title": "title",
        "review": "review",
        "negative": "negative",
    },
    "amazon": {
        "user": "reviewerID",
        "item": "asin",
        "timestamp": "unixReviewTime",
        "title": "summary",
        "review": "reviewText",
        "negative": None,
    },
}
REQUIRED = ("user", "item", "timestamp")


@dataclass(frozen=True, order=True)
class Event:
    timestamp: int
    user: str
    item: str
    title: str = ""
    review: str = ""
    negative: str = ""  # optional pre-drawn negative item

    def to_dict(self) -> dict:
        d = {
            "user": self.user,
            "item": self.item,
            "timestamp": self.timestamp,
            "title": self.title,
            "review": self.review,
        }
        if self.negative:
            d["negative"] = self.negative
        return d


def _sort_key(e: Event) -> tuple:
    return (e.timestamp, e.user, e.item)


@dataclass(frozen=True)
class Dataset:
    name: str
    events: tuple[Event, ...] = ()
    presampled: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_events(cls, name: str, events: Iterable[Event], presampled: bool = False) -> Dataset:
        seen: set[tuple] = set()
        unique = []
        for e in events:
            key = (e.user, e.item, e.timestamp)
            if key not in seen:
                seen.add(key)
                unique.append(e)
        return cls(name, tuple(sorted(unique, key=_sort_key)), presampled)

    def users(self) -> list[str]:
        return sorted({e.user for e in self.events})

    def items(self) -> list[str]:
        return sorted({e.item for e in self.events})

    def history(self, user: str) -> list[Event]:
        return [e for e in self.events if e.user == user]

    def histories(self) -> dict[str, list[Event]]:
        out: dict[str, list[Event]] = {}
        for e in self.events:
            out.setdefault(e.user, []).append(e)
        return out

    def item_titles(self) -> dict[str, str]:
        """Title of each item's earliest event that has one."""
        titles: dict[str, str] = {}
        for e in self.events:
            if e.title and e.item not in titles:
                titles[e.item] = e.title
        return titles

    def stats(self) -> dict:
        n_users, n_items, n = len(self.users()), len(self.items()), len(self.events)
        density = n / (n_users * n_items) if n_users and n_items else 0.0
        return {
            "users": n_users,
            "items": n_items,
            "interactions": n,
            "sparsity": 1.0 - density if n else 0.0,
        }

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in self.events)


def format_stats(stats: dict) -> str:
    return (
        f"users={stats['users']} items={stats['items']} interactions={stats['interactions']} "
        f"sparsity={stats['sparsity'] * 100:.2f}%"
    )


def parse_rows(lines: Iterable[str], fmt: str = "internal") -> list[Event]:
    try:
        names = FORMATS[fmt]
    except KeyError:
        raise ValueError(f"unknown format {fmt!r}; expected one of {sorted(FORMATS)}") from None
    events = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(row, dict):
            raise ParseError("row is not a JSON object", lineno)
        for f in REQUIRED:
            if row.get(names[f]) in (None, ""):
                raise MissingField(f"missing field {names[f]!r}", lineno)
        try:
            ts = int(row[names["timestamp"]])
        except (TypeError, ValueError):
            raise ParseError(f"timestamp {row[names['timestamp']]!r} is not an integer", lineno) from None
        events.append(
            Event(
                ts,
                str(row[names["user"]]),
                str(row[names["item"]]),
                str(row.get(names["title"]) or ""),
                str(row.get(names["review"]) or ""),
                str(row.get(names["negative"]) or "") if names["negative"] else "",
            )
        )
    return events


def ingest(path: str | Path, fmt: str = "internal", presampled: bool = False) -> Dataset:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        events = parse_rows(fh, fmt)
    return Dataset.from_events(path.stem, events, presampled)


def five_core(ds: Dataset, k: int = 5) -> Dataset:
    events = list(ds.events)
    while True:
        users = Counter(e.user for e in events)
        items = Counter(e.item for e in events)
        kept = [e for e in events if users[e.user] >= k and items[e.item] >= k]
        if len(kept) == len(events):
            return Dataset(ds.name, tuple(kept), ds.presampled)
        events = kept


def sample_users(ds: Dataset, n: int, seed: int, max_history: int | None = None) -> Dataset:
    """Seeded user sample, each history truncated to its most recent events."""
    users = ds.users()
    rng = np.random.default_rng(seed)
    picked = set(users) if n >= len(users) else {users[i] for i in sorted(rng.choice(len(users), n, replace=False))}
    hist = ds.histories()
    events = []
    for u in sorted(picked):
        h = hist[u]
        events.extend(h[-max_history:] if max_history else h)
    return Dataset.from_events(ds.name, events, presampled=True)
