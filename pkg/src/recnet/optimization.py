"""Feedback-driven optimization: reward, credit assignment, module updates,
and router split / merge / rewrite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .backends.base import (
    AggregatedGradient,
    GradientContext,
    PromptBackend,
    RouterAction,
    RouterCandidate,
    RouterDecision,
)
from .directives import parse_directives
from .embedding import EmbeddingBackend, cosine
from .errors import DegenerateSplit
from .model import (
    ClientAgent,
    ClientId,
    InteractionRecord,
    ModuleKind,
    ModuleRef,
    NetworkConfig,
    RouterAgent,
    TextualGradient,
)
from .routing import AttributeDiff, diff_attributes, kmeans, make_router

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeedbackRecord:
    record: InteractionRecord
    chosen: ClientId
    reward: int
    involved_modules: tuple[ModuleRef, ...]
    contributing_routers: frozenset[int]

    def __post_init__(self) -> None:
        if self.reward != int(self.chosen == self.record.positive):
            raise ValueError("reward must be 1 exactly when the positive item was chosen")


@dataclass(frozen=True)
class RouterFeedback:
    """One router gradient waiting for the next router-centric stage."""

    gradient: TextualGradient
    reward: int
    client: str


def compute_reward(chosen: ClientId, positive: ClientId) -> int:
    return 1 if chosen == positive else 0


def assign_credit(
    feedback: FeedbackRecord,
    contents: Mapping[ModuleRef, str],
    ctx: GradientContext,
    backend: PromptBackend,
) -> list[TextualGradient]:
    """One gradient-prompt call per involved module, in module order."""
    return [backend.gradient(m, contents[m], ctx) for m in feedback.involved_modules]


def optimize_client_modules(
    gradients: Sequence[TextualGradient],
    clients: Mapping[str, ClientAgent],
    backend: PromptBackend,
) -> tuple[dict[str, ClientAgent], list[AttributeDiff], int]:
    """Apply profile and filter-memory gradients.

    Returns (updated clients, attribute diffs to queue, number of profile
    optimizer calls). Router gradients are ignored here.
    """
    out = dict(clients)
    diffs: list[AttributeDiff] = []
    profile_calls = 0
    for grad in gradients:
        ref = grad.module_ref
        if ref.kind is ModuleKind.ROUTER or grad.is_empty:
            continue
        key = ref.client.key
        client = out[key]
        if ref.kind is ModuleKind.CLIENT_PROFILE:
            profile_calls += 1
            new_profile = backend.optimize_profile(client.profile, grad.gradient_text)
            if new_profile == client.profile:
                continue
            diff, client = diff_attributes(client, new_profile, backend)
            if diff is not None:
                diffs.append(diff)
            out[key] = client
        else:
            new_filter = backend.optimize_filter(client.filter_memory, grad.gradient_text)
            out[key] = replace(client, filter_memory=new_filter)
    return out, diffs, profile_calls


def aggregate_router_gradients(router: RouterAgent, feedback: Sequence[RouterFeedback]) -> AggregatedGradient:
    lines: list[str] = []
    provenance: list[str] = []
    for fb in feedback:
        for line in fb.gradient.gradient_text.splitlines():
            if line.strip():
                lines.append(line.strip())
                provenance.append(fb.client)
    return AggregatedGradient(
        router_id=router.id,
        directives_text="\n".join(lines),
        provenance=tuple(provenance),
        negative_count=sum(1 for fb in feedback if fb.reward == 0),
        gradient_count=len(feedback),
        size=len(router.attributes),
    )


def decide_router_action(
    router: RouterAgent,
    aggregated: AggregatedGradient,
    routers: Sequence[RouterAgent],
    config: NetworkConfig,
    backend: PromptBackend,
) -> RouterDecision:
    candidates = [
        RouterCandidate(other.id, cosine(router.embedding, other.embedding))
        for other in routers
        if other.id != router.id
    ]
    return backend.optimize_router(
        router, aggregated, candidates, config.split_threshold, config.merge_threshold
    )


@dataclass(frozen=True)
class DecisionOutcome:
    routers: list[RouterAgent]
    action: str  # what was actually applied
    children: tuple[int, ...]
    retired: tuple[int, ...]
    next_id: int


def _split_groups(attrs: list[str], embedder: EmbeddingBackend, seed: int) -> tuple[list[str], list[str]]:
    if len(attrs) <= 1:
        raise DegenerateSplit("a router with at most one attribute cannot split")
    points = np.stack([embedder.embed(a).array for a in attrs])
    labels = kmeans(points, 2, seed)
    left = [a for a, lab in zip(attrs, labels) if lab == 0]
    right = [a for a, lab in zip(attrs, labels) if lab == 1]
    if not left or not right:
        raise DegenerateSplit("2-means produced a single group")
    return left, right


def _rewrite(
    router: RouterAgent,
    aggregated: AggregatedGradient | None,
    payload: str | None,
    backend: PromptBackend,
    embedder: EmbeddingBackend,
) -> RouterAgent:
    attrs = set(router.attributes)
    if aggregated is not None:
        directives, _ = parse_directives(aggregated.directives_text)
        for d in directives:
            if d.op == "remove" and d.arg in attrs and len(attrs) > 1:
                attrs.discard(d.arg)
    profile = payload if payload else backend.summarize("", frozenset(attrs))
    return RouterAgent(router.id, profile, frozenset(attrs), embedder.embed(profile), router.generation + 1)


def apply_router_decision(
    routers: Sequence[RouterAgent],
    router_id: int,
    decision: RouterDecision,
    backend: PromptBackend,
    embedder: EmbeddingBackend,
    seed: int,
    next_id: int,
    aggregated: AggregatedGradient | None = None,
) -> DecisionOutcome:
    by_id = {r.id: r for r in routers}
    router = by_id[router_id]
    action = decision.action
    if action is RouterAction.MERGE and (decision.target not in by_id or decision.target == router_id):
        log.warning("merge target %s of router %s is gone; skipping", decision.target, router_id)
        action = RouterAction.NOOP

    if action is RouterAction.NOOP:
        return DecisionOutcome(list(routers), "noop", (), (), next_id)

    if action is RouterAction.SPLIT:
        try:
            left, right = _split_groups(sorted(router.attributes), embedder, seed + router_id)
        except DegenerateSplit as exc:
            log.info("router %s: %s; rewriting instead", router_id, exc)
            action = RouterAction.REWRITE
        else:
            children = [
                make_router(next_id, left, backend, embedder, router.generation + 1),
                make_router(next_id + 1, right, backend, embedder, router.generation + 1),
            ]
            out = [r for r in routers if r.id != router_id] + children
            out.sort(key=lambda r: r.id)
            return DecisionOutcome(out, "split", (next_id, next_id + 1), (router_id,), next_id + 2)

    if action is RouterAction.MERGE:
        other = by_id[decision.target]
        keep, drop = (router, other) if router.id < other.id else (other, router)
        attrs = keep.attributes | drop.attributes
        profile = backend.summarize("", attrs)
        merged = RouterAgent(
            keep.id, profile, attrs, embedder.embed(profile), max(keep.generation, drop.generation) + 1
        )
        out = [merged if r.id == keep.id else r for r in routers if r.id != drop.id]
        return DecisionOutcome(out, "merge", (keep.id,), (drop.id,), next_id)

    rewritten = _rewrite(router, aggregated, decision.payload, backend, embedder)
    out = [rewritten if r.id == router_id else r for r in routers]
    return DecisionOutcome(out, "rewrite", (router_id,), (), next_id)
