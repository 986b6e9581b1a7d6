"""Centralized preference routing.

Routers are initialized by k-means over attribute embeddings, absorb newly
updated client attributes (argmax cosine), and multicast their profile to
every client whose routing-table score clears ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .backends.base import PromptBackend
from .embedding import EmbeddingBackend, cosine
from .errors import NoAttributes, NoRouters
from .model import ClientAgent, ClientId, PropagatedMessage, RouterAgent
from .reception import buffer_push

TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class AttributeDiff:
    client: ClientId
    added: frozenset[str]

    def to_dict(self) -> dict:
        return {"client": self.client.to_dict(), "added": sorted(self.added)}

    @classmethod
    def from_dict(cls, d: Mapping) -> AttributeDiff:
        return cls(ClientId.from_dict(d["client"]), frozenset(d["added"]))


@dataclass
class RoutingTable:
    scores: dict[tuple[int, str], float] = field(default_factory=dict)
    tau: float = 0.8
    built_at: int = 0

    def above(self) -> list[tuple[int, str, float]]:
        return sorted(
            (rid, ckey, s) for (rid, ckey), s in self.scores.items() if s > self.tau
        )


# -- clustering ----------------------------------------------------------------


def kmeans(
    points: np.ndarray, k: int, seed: int, max_iter: int = 50, tol: float = 1e-6
) -> np.ndarray:
    """Lloyd's k-means with seeded farthest-point initialization.

    Returns one label per row. Empty clusters are reseeded at the point
    farthest from its current centroid.
    """
    n = len(points)
    k = min(k, n)
    rng = np.random.default_rng(seed)
    centers_idx = [int(rng.integers(n))]
    dist = np.linalg.norm(points - points[centers_idx[0]], axis=1)
    while len(centers_idx) < k:
        nxt = int(np.argmax(dist))  # first index wins ties
        centers_idx.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    centers = points[centers_idx].copy()
    labels = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        new = centers.copy()
        for j in range(k):
            members = points[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
            else:
                own = d2[np.arange(n), labels]
                far = int(np.argmax(own))
                new[j] = points[far]
                labels[far] = j
        moved = float(np.max(np.linalg.norm(new - centers, axis=1)))
        centers = new
        if moved < tol:
            break
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def make_router(
    rid: int, attributes: Iterable[str], backend: PromptBackend, embedder: EmbeddingBackend, generation: int = 0
) -> RouterAgent:
    attrs = frozenset(attributes)
    profile = backend.summarize("", attrs)
    return RouterAgent(rid, profile, attrs, embedder.embed(profile), generation)


def init_routers(
    clients: Iterable[ClientAgent],
    k: int,
    backend: PromptBackend,
    embedder: EmbeddingBackend,
    seed: int,
    first_id: int = 0,
) -> list[RouterAgent]:
    attrs = sorted(set().union(*(c.attributes for c in clients)))
    if not attrs:
        raise NoAttributes("no client has any attribute to cluster")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(attrs) <= k:
        groups = [[a] for a in attrs]
    else:
        points = np.stack([embedder.embed(a).array for a in attrs])
        labels = kmeans(points, k, seed)
        groups = [[a for a, lab in zip(attrs, labels) if lab == j] for j in range(k)]
        groups = [g for g in groups if g]
    groups.sort(key=lambda g: g[0])
    return [make_router(first_id + i, g, backend, embedder) for i, g in enumerate(groups)]


# -- client -> router ----------------------------------------------------------


def diff_attributes(
    client: ClientAgent, new_profile: str, backend: PromptBackend
) -> tuple[AttributeDiff | None, ClientAgent]:
    """Re-extract attributes for ``new_profile``; returns (diff or None, updated client)."""
    new_attrs = frozenset(backend.extract(new_profile))
    added = new_attrs - client.attributes
    updated = replace(client, profile=new_profile, attributes=new_attrs)
    return (AttributeDiff(client.id, added) if added else None), updated


def route_attribute(attribute: str, routers: Sequence[RouterAgent], embedder: EmbeddingBackend) -> int:
    """Router whose embedding is most similar to the attribute; ties -> smallest id."""
    if not routers:
        raise NoRouters("cannot route without routers")
    e_a = embedder.embed(attribute)
    scored = [(cosine(e_a, r.embedding), r.id) for r in routers]
    best = max(s for s, _ in scored)
    return min(rid for s, rid in scored if best - s <= TIE_TOLERANCE)


def integrate_batch(
    diffs: Sequence[AttributeDiff],
    routers: Sequence[RouterAgent],
    backend: PromptBackend,
    embedder: EmbeddingBackend,
) -> tuple[list[RouterAgent], list[int]]:
    """Route every added attribute and re-summarize each router that received any.

    Returns (routers, touched router ids). The input list is never modified,
    so a backend failure leaves the caller's routers as they were.
    """
    routed: dict[int, set[str]] = {}
    for diff in diffs:
        for attr in sorted(diff.added):
            routed.setdefault(route_attribute(attr, routers, embedder), set()).add(attr)
    out = []
    for r in routers:
        new = routed.get(r.id)
        if not new:
            out.append(r)
            continue
        profile = backend.summarize(r.profile, frozenset(new))
        out.append(
            RouterAgent(r.id, profile, r.attributes | new, embedder.embed(profile), r.generation + 1)
        )
    return out, sorted(routed)


# -- router -> client ------------------------------------------------------------


def score(
    router: RouterAgent, client: ClientAgent, embedder: EmbeddingBackend, cold_bypass: bool = True
) -> float:
    """Profile cosine gated by attribute overlap; cold clients skip the gate."""
    sim = cosine(router.embedding, embedder.embed(client.profile))
    if cold_bypass and client.interaction_count == 0:
        return sim
    return sim if router.attributes & client.attributes else 0.0


def build_table(
    routers: Iterable[RouterAgent],
    clients: Mapping[str, ClientAgent],
    embedder: EmbeddingBackend,
    tau: float,
    batch: int,
    cold_bypass: bool = True,
) -> RoutingTable:
    table = RoutingTable(tau=tau, built_at=batch)
    for r in routers:
        for key in sorted(clients):
            table.scores[(r.id, key)] = score(r, clients[key], embedder, cold_bypass)
    return table


def router_message(router: RouterAgent) -> PropagatedMessage:
    return PropagatedMessage(router.id, router.profile, router.attributes)


def multicast(
    updated: Iterable[int],
    routers: Sequence[RouterAgent],
    clients: Mapping[str, ClientAgent],
    table: RoutingTable,
    tau: float,
) -> tuple[dict[str, ClientAgent], list[dict]]:
    """Push each updated router's profile to every client scoring above ``tau``.

    Returns (new client map, delivery log). Each (router, client) pair is
    delivered at most once per batch.
    """
    by_id = {r.id: r for r in routers}
    wanted = set(updated)
    out = dict(clients)
    log: list[dict] = []
    delivered: set[tuple[int, str]] = set()
    for (rid, key), s in sorted(table.scores.items()):
        if rid not in wanted or rid not in by_id or not s > tau or (rid, key) in delivered:
            continue
        delivered.add((rid, key))
        client = out[key]
        out[key] = replace(client, buffer=buffer_push(client.buffer, router_message(by_id[rid])))
        log.append({"batch": table.built_at, "router": rid, "client": key, "score": s})
    return out, log
