"""The prompt-backend boundary.

Every LLM touch point goes through a :class:`PromptBackend`. The public
methods count the invocation (exactly one counter each, attributed to the
current stage) and delegate to the subclass hook.
"""

from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from collections import Counter, defaultdict
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Sequence

from ..model import (
    ClientId,
    FilterMemory,
    InteractionRecord,
    ModuleRef,
    PropagatedMessage,
    RouterAgent,
    TextualGradient,
)
from ..text import MAX_ATTRIBUTES

PROMPT_KINDS = ("extract", "summarize", "merge", "predict", "gradient", "optimizer", "rerank", "rank")


@dataclass(frozen=True)
class PredictOutcome:
    chosen: ClientId
    rationale: str = ""
    parsed: bool = True


class RouterAction(str, Enum):
    SPLIT = "split"
    MERGE = "merge"
    REWRITE = "rewrite"
    NOOP = "noop"


@dataclass(frozen=True)
class RouterDecision:
    action: RouterAction
    target: int | None = None
    payload: str | None = None

    def __post_init__(self) -> None:
        if (self.action is RouterAction.MERGE) != (self.target is not None):
            raise ValueError("merge decisions (and only those) carry a target")


@dataclass(frozen=True)
class GradientContext:
    """What the gradient prompt sees about one interaction."""

    record: InteractionRecord
    reward: int
    chosen: ClientId
    user_profile: str
    user_merged: str
    pos_merged: str
    neg_merged: str


@dataclass(frozen=True)
class AggregatedGradient:
    router_id: int
    directives_text: str
    provenance: tuple[str, ...]  # one client key per directive line
    negative_count: int
    gradient_count: int
    size: int


@dataclass(frozen=True)
class RouterCandidate:
    router_id: int
    cosine: float


class PromptBackend(ABC):
    name = "abstract"

    def __init__(self, max_attributes: int = MAX_ATTRIBUTES) -> None:
        self.max_attributes = max_attributes
        self.calls: Counter[str] = Counter()
        self.stage_calls: dict[str, Counter[str]] = defaultdict(Counter)
        self.stage = "client"
        self.http_calls = 0
        self._lock = threading.Lock()

    def _count(self, kind: str) -> None:
        with self._lock:
            self.calls[kind] += 1
            self.stage_calls[self.stage][kind] += 1

    @contextmanager
    def in_stage(self, stage: str) -> Iterator[None]:
        prev, self.stage = self.stage, stage
        try:
            yield
        finally:
            self.stage = prev

    def reset_counters(self) -> None:
        with self._lock:
            self.calls.clear()
            self.stage_calls.clear()

    # -- public surface: one counter per call --------------------------------

    def extract(self, profile: str) -> tuple[str, ...]:
        self._count("extract")
        return self._extract(profile)

    def summarize(self, router_profile: str, new_attrs: frozenset[str] | set[str]) -> str:
        self._count("summarize")
        return self._summarize(router_profile, frozenset(new_attrs))

    def merge(self, buffered: Sequence[PropagatedMessage], filt: FilterMemory, profile: str) -> str:
        self._count("merge")
        return self._merge(tuple(buffered), filt, profile)

    def predict(
        self, user_profile: str, pos: tuple[ClientId, str], neg: tuple[ClientId, str]
    ) -> PredictOutcome:
        self._count("predict")
        out = self._predict(user_profile, pos, neg)
        if out.chosen not in (pos[0], neg[0]):
            # Never trust a choice outside the candidate pair; count it as wrong.
            return PredictOutcome(neg[0], out.rationale, parsed=False)
        return out

    def gradient(self, module: ModuleRef, content: str, ctx: GradientContext) -> TextualGradient:
        self._count("gradient")
        return self._gradient(module, content, ctx)

    def optimize_profile(self, profile: str, gradient_text: str) -> str:
        self._count("optimizer")
        return self._optimize_profile(profile, gradient_text)

    def optimize_filter(self, filt: FilterMemory, gradient_text: str) -> FilterMemory:
        self._count("optimizer")
        return self._optimize_filter(filt, gradient_text)

    def optimize_router(
        self,
        router: RouterAgent,
        aggregated: AggregatedGradient,
        candidates: Sequence[RouterCandidate],
        split_threshold: int,
        merge_threshold: float,
    ) -> RouterDecision:
        self._count("optimizer")
        return self._optimize_router(router, aggregated, tuple(candidates), split_threshold, merge_threshold)

    def rerank(self, source_profile: str, candidates: Sequence[tuple[str, str]], k: int) -> list[str]:
        self._count("rerank")
        return self._rerank(source_profile, tuple(candidates), k)

    def rank(self, user_profile: str, candidates: Sequence[tuple[ClientId, str]]) -> list[ClientId]:
        self._count("rank")
        return self._rank(user_profile, tuple(candidates))

    # -- hooks -----------------------------------------------------------------

    @abstractmethod
    def _extract(self, profile: str) -> tuple[str, ...]: ...

    @abstractmethod
    def _summarize(self, router_profile: str, new_attrs: frozenset[str]) -> str: ...

    @abstractmethod
    def _merge(self, buffered: tuple[PropagatedMessage, ...], filt: FilterMemory, profile: str) -> str: ...

    @abstractmethod
    def _predict(
        self, user_profile: str, pos: tuple[ClientId, str], neg: tuple[ClientId, str]
    ) -> PredictOutcome: ...

    @abstractmethod
    def _gradient(self, module: ModuleRef, content: str, ctx: GradientContext) -> TextualGradient: ...

    @abstractmethod
    def _optimize_profile(self, profile: str, gradient_text: str) -> str: ...

    @abstractmethod
    def _optimize_filter(self, filt: FilterMemory, gradient_text: str) -> FilterMemory: ...

    @abstractmethod
    def _optimize_router(
        self,
        router: RouterAgent,
        aggregated: AggregatedGradient,
        candidates: tuple[RouterCandidate, ...],
        split_threshold: int,
        merge_threshold: float,
    ) -> RouterDecision: ...

    @abstractmethod
    def _rerank(self, source_profile: str, candidates: tuple[tuple[str, str], ...], k: int) -> list[str]: ...

    @abstractmethod
    def _rank(self, user_profile: str, candidates: tuple[tuple[ClientId, str], ...]) -> list[ClientId]: ...
