"""Deterministic rule-based stand-in for every prompt.

The mock is a pure function of its inputs. Its rules define the testable
semantics of the network:

* extract   -- distinct non-stopword tokens, first occurrence, capped.
* summarize -- sorted union rendered as ``community interests: ...``.
* merge     -- own tokens, then incoming tokens admitted by the filter.
* predict   -- larger Jaccard overlap wins; ties go to the smaller item id.
* gradient  -- directive lines (see :mod:`recnet.directives`).
"""

from __future__ import annotations

from ..directives import (
    Directive,
    apply_profile_directives,
    apply_rule_directives,
    parse_directives,
    render_directives,
)
from ..model import (
    Action,
    ClientId,
    FilterMemory,
    ModuleKind,
    ModuleRef,
    PropagatedMessage,
    RouterAgent,
    TextualGradient,
)
from ..text import MAX_ATTRIBUTES, extract_tokens, jaccard, render_interests
from .base import (
    AggregatedGradient,
    GradientContext,
    PredictOutcome,
    PromptBackend,
    RouterAction,
    RouterCandidate,
    RouterDecision,
)

ROUTER_PREFIX = "community interests"
ITEM_ADD_LIMIT = 3


class MockBackend(PromptBackend):
    name = "mock"

    def __init__(self, max_attributes: int = MAX_ATTRIBUTES, seed: int = 0) -> None:
        super().__init__(max_attributes)
        self.seed = seed

    def tokens(self, text: str) -> tuple[str, ...]:
        return extract_tokens(text, self.max_attributes)

    def _extract(self, profile: str) -> tuple[str, ...]:
        return self.tokens(profile)

    def _summarize(self, router_profile: str, new_attrs: frozenset[str]) -> str:
        if not new_attrs:
            return router_profile
        union = set(self.tokens(router_profile)) | set(new_attrs)
        return render_interests(sorted(union)[: self.max_attributes], ROUTER_PREFIX)

    def _merge(self, buffered: tuple[PropagatedMessage, ...], filt: FilterMemory, profile: str) -> str:
        if not buffered:
            return profile
        own = list(self.tokens(profile))
        own_set = set(own)
        deny = [r for r in filt.rules if r.action is Action.DENY]
        allow = [r for r in filt.rules if r.action is Action.ALLOW]
        incoming: list[str] = []
        for msg in buffered:  # newest first
            for tok in self.tokens(msg.router_profile):
                if tok in own_set or tok in incoming:
                    continue
                if any(r.matches(tok) for r in deny):
                    continue
                incoming.append(tok)
        pinned = [t for t in incoming if any(r.matches(t) for r in allow)]
        rest = [t for t in incoming if t not in pinned]
        room = max(0, self.max_attributes - len(own) - len(pinned))
        return render_interests(own + pinned + rest[:room])

    def _predict(
        self, user_profile: str, pos: tuple[ClientId, str], neg: tuple[ClientId, str]
    ) -> PredictOutcome:
        user = self.tokens(user_profile)
        scored = sorted(
            (pos, neg), key=lambda cand: (-jaccard(user, self.tokens(cand[1])), cand[0].raw)
        )
        best = scored[0][0]
        return PredictOutcome(best, f"jaccard choice {best.raw}")

    def _gradient(self, module: ModuleRef, content: str, ctx: GradientContext) -> TextualGradient:
        directives: list[Directive] = []
        if ctx.reward == 0:
            user_own = self.tokens(ctx.user_profile)
            user_merged = self.tokens(ctx.user_merged)
            incoming = [t for t in user_merged if t not in user_own]
            pos_toks = self.tokens(ctx.pos_merged)
            neg_toks = self.tokens(ctx.neg_merged)
            misleading = [t for t in incoming if t in neg_toks and t not in pos_toks]
            if module.kind is ModuleKind.FILTER_MEM:
                directives = [Directive("rule", t, "deny") for t in misleading]
            elif module.kind is ModuleKind.ROUTER:
                router_toks = set(self.tokens(content))
                directives = [Directive("remove", t) for t in misleading if t in router_toks]
                if directives:
                    directives.append(Directive("router", action="rewrite"))
            elif module.client == ctx.record.user:
                directives = [Directive("add", t) for t in pos_toks if t not in user_merged]
            elif module.client == ctx.record.positive:
                have = set(self.tokens(content))
                missing = [t for t in user_own if t not in have]
                directives = [Directive("add", t) for t in missing[:ITEM_ADD_LIMIT]]
        reward_text = f"reward={ctx.reward}; {module}: {len(directives)} directive(s)"
        return TextualGradient(module, reward_text, render_directives(directives))

    def _optimize_profile(self, profile: str, gradient_text: str) -> str:
        directives, _ = parse_directives(gradient_text)
        if not directives:
            return profile
        tokens = apply_profile_directives(self.tokens(profile), directives, self.max_attributes)
        return render_interests(tokens)

    def _optimize_filter(self, filt: FilterMemory, gradient_text: str) -> FilterMemory:
        directives, _ = parse_directives(gradient_text)
        return apply_rule_directives(filt, directives)

    def _optimize_router(
        self,
        router: RouterAgent,
        aggregated: AggregatedGradient,
        candidates: tuple[RouterCandidate, ...],
        split_threshold: int,
        merge_threshold: float,
    ) -> RouterDecision:
        if len(router.attributes) > split_threshold:
            return RouterDecision(RouterAction.SPLIT)
        close = sorted(c.router_id for c in candidates if c.router_id != router.id and c.cosine > merge_threshold)
        if close:
            return RouterDecision(RouterAction.MERGE, target=close[0])
        if aggregated.negative_count > 0:
            return RouterDecision(RouterAction.REWRITE)
        return RouterDecision(RouterAction.NOOP)

    def _rerank(self, source_profile: str, candidates: tuple[tuple[str, str], ...], k: int) -> list[str]:
        src = self.tokens(source_profile)
        ordered = sorted(candidates, key=lambda c: (-jaccard(src, self.tokens(c[1])), c[0]))
        return [key for key, _ in ordered[:k]]

    def _rank(self, user_profile: str, candidates: tuple[tuple[ClientId, str], ...]) -> list[ClientId]:
        user = self.tokens(user_profile)
        ordered = sorted(candidates, key=lambda c: (-jaccard(user, self.tokens(c[1])), c[0].raw))
        return [cid for cid, _ in ordered]
