"""Chat-completions backend.

Prompts are rendered from the versioned templates in ``recnet/prompts``;
replies are parsed best-effort and fall back to safe defaults (wrong
prediction, NoOp decision, mock ordering) with a logged warning.
"""

from __future__ import annotations

import logging
import os
import re
import time
from importlib import resources
from typing import Callable

import httpx

from ..directives import apply_rule_directives, parse_directives
from ..errors import (
    ConfigError,
    EmptyAfterNormalization,
    MalformedResponse,
    NetworkError,
    RateLimited,
    UnparseableChoice,
)
from ..model import ClientId, FilterMemory, ModuleRef, PropagatedMessage, RouterAgent, TextualGradient
from ..text import MAX_ATTRIBUTES, normalize_attribute
from .base import (
    AggregatedGradient,
    GradientContext,
    PredictOutcome,
    PromptBackend,
    RouterAction,
    RouterCandidate,
    RouterDecision,
)
from .mock import MockBackend

log = logging.getLogger(__name__)

_PLACEHOLDER = re.compile(r"\{\{\s*(\w+)\s*\}\}")


def load_template(kind: str) -> str:
    text = resources.files("recnet.prompts").joinpath(f"{kind}.txt").read_text("utf-8")
    return "\n".join(line for line in text.splitlines() if not line.startswith("## "))


def render_template(template: str, **values: object) -> str:
    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key not in values:
            raise KeyError(f"template placeholder {key!r} has no value")
        return str(values[key])

    return _PLACEHOLDER.sub(sub, template)


def _numbered(lines: list[str]) -> str:
    return "\n".join(f"{i + 1}. {line}" for i, line in enumerate(lines))


def _numbers(text: str) -> list[int]:
    return [int(m) for m in re.findall(r"\d+", text)]


class HttpBackend(PromptBackend):
    name = "http"

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str,
        *,
        temperature: float = 0.0,
        max_attributes: int = MAX_ATTRIBUTES,
        client: httpx.Client | None = None,
        max_attempts: int = 3,
        backoff: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        timeout: float = 120.0,
    ) -> None:
        super().__init__(max_attributes)
        if not base_url or not model:
            raise ConfigError("http backend needs base_url and model")
        if not api_key_env:
            raise ConfigError("http backend needs api_key_env")
        key = os.environ.get(api_key_env)
        if not key:
            raise ConfigError(f"environment variable {api_key_env} is not set")
        self.api_key = key
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.temperature = temperature
        self.client = client or httpx.Client(timeout=timeout)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.sleep = sleep
        self.templates = {
            k: load_template(k)
            for k in ("extract", "summarize", "merge", "predict", "gradient", "optimizer", "rerank", "rank")
        }
        self._fallback = MockBackend(max_attributes)

    # -- transport ---------------------------------------------------------------

    def http_complete(self, prompt_kind: str, rendered_prompt: str) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": rendered_prompt}],
            "temperature": self.temperature,
        }
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            delay = self.backoff * (2**attempt)
            self.http_calls += 1
            try:
                resp = self.client.post(self.url, json=body, headers=headers)
            except httpx.TransportError as exc:
                last = NetworkError(f"{prompt_kind}: {exc}")
            else:
                if resp.status_code == 429:
                    retry_after = resp.headers.get("retry-after")
                    try:
                        delay = float(retry_after) if retry_after is not None else delay
                    except ValueError:
                        pass
                    last = RateLimited(f"{prompt_kind}: rate limited", delay)
                elif resp.status_code >= 500:
                    last = NetworkError(f"{prompt_kind}: server error {resp.status_code}")
                elif resp.status_code >= 400:
                    raise NetworkError(f"{prompt_kind}: request rejected with {resp.status_code}")
                else:
                    try:
                        return resp.json()["choices"][0]["message"]["content"] or ""
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise MalformedResponse(f"{prompt_kind}: unexpected reply shape") from exc
            if attempt + 1 < self.max_attempts:
                log.warning("%s; retrying in %.1fs", last, delay)
                self.sleep(delay)
        assert last is not None
        raise last

    def _ask(self, kind: str, **values: object) -> str:
        return self.http_complete(kind, render_template(self.templates[kind], **values))

    # -- prompts ---------------------------------------------------------------

    def _extract(self, profile: str) -> tuple[str, ...]:
        if not profile.strip():
            return ()
        reply = self._ask("extract", profile=profile, max_attributes=self.max_attributes)
        out: list[str] = []
        for chunk in re.split(r"[\n,;]", reply):
            chunk = re.sub(r"^\s*(?:[-*]|\d+[.)])\s*", "", chunk)
            try:
                attr = normalize_attribute(chunk)
            except EmptyAfterNormalization:
                continue
            if attr not in out:
                out.append(attr)
        return tuple(out[: self.max_attributes])

    def _summarize(self, router_profile: str, new_attrs: frozenset[str]) -> str:
        if not new_attrs:
            return router_profile
        reply = self._ask(
            "summarize", router_profile=router_profile or "(empty)", attributes=", ".join(sorted(new_attrs))
        )
        return reply.strip()

    def _merge(self, buffered: tuple[PropagatedMessage, ...], filt: FilterMemory, profile: str) -> str:
        if not buffered:
            return profile
        reply = self._ask(
            "merge",
            client="this client",
            profile=profile or "(empty)",
            rules=filt.render() or "(no rules)",
            messages=_numbered([m.router_profile for m in buffered]),
        )
        return reply.strip() or profile

    def _predict(
        self, user_profile: str, pos: tuple[ClientId, str], neg: tuple[ClientId, str]
    ) -> PredictOutcome:
        a, b = sorted((pos, neg), key=lambda c: c[0].raw)
        reply = self._ask(
            "predict",
            user_profile=user_profile or "(empty)",
            item_a_id=a[0].raw,
            item_a_profile=a[1] or "(empty)",
            item_b_id=b[0].raw,
            item_b_profile=b[1] or "(empty)",
        )
        try:
            chosen = self.parse_choice(reply, a[0], b[0])
        except UnparseableChoice as exc:
            log.warning("%s; counted as a wrong prediction", exc)
            return PredictOutcome(neg[0], reply, parsed=False)
        return PredictOutcome(chosen, reply)

    @staticmethod
    def parse_choice(reply: str, a: ClientId, b: ClientId) -> ClientId:
        first = reply.strip().splitlines()[0] if reply.strip() else ""
        for text in (first, reply):
            hits_a = bool(re.search(r"\bitem\s*a\b", text, re.I)) or a.raw in text
            hits_b = bool(re.search(r"\bitem\s*b\b", text, re.I)) or b.raw in text
            if hits_a != hits_b:
                return a if hits_a else b
            bare = text.strip().strip(".").upper()
            if bare in ("A", "B"):
                return a if bare == "A" else b
        raise UnparseableChoice(f"reply names neither or both candidates: {reply[:80]!r}")

    def _gradient(self, module: ModuleRef, content: str, ctx: GradientContext) -> TextualGradient:
        reply = self._ask(
            "gradient",
            user=ctx.record.user.raw,
            positive=ctx.record.positive.raw,
            negative=ctx.record.negative.raw,
            chosen=ctx.chosen.raw,
            reward=ctx.reward,
            user_merged=ctx.user_merged or "(empty)",
            user_profile=ctx.user_profile or "(empty)",
            pos_merged=ctx.pos_merged or "(empty)",
            neg_merged=ctx.neg_merged or "(empty)",
            module=str(module),
            content=content or "(empty)",
        )
        reward_text, _, grad = reply.partition("GRADIENT:")
        if not _:
            grad, reward_text = reply, ""
        reward_text = reward_text.replace("REWARD:", "").strip()
        return TextualGradient(module, reward_text, grad.strip())

    def _optimize_profile(self, profile: str, gradient_text: str) -> str:
        if not gradient_text.strip():
            return profile
        reply = self._ask(
            "optimizer",
            module_type="client profile",
            content=profile or "(empty)",
            gradient=gradient_text,
            instructions="Rewrite the profile accordingly. Reply with the new profile text only.",
        )
        return reply.strip() or profile

    def _optimize_filter(self, filt: FilterMemory, gradient_text: str) -> FilterMemory:
        if not gradient_text.strip():
            return filt
        reply = self._ask(
            "optimizer",
            module_type="filter memory (integration rules)",
            content=filt.render() or "(no rules)",
            gradient=gradient_text,
            instructions="Reply with the rules to add, one per line, as rule:allow:<attribute> or rule:deny:<attribute>.",
        )
        directives, _ = parse_directives(reply)
        return apply_rule_directives(filt, [d for d in directives if d.op == "rule"])

    def _optimize_router(
        self,
        router: RouterAgent,
        aggregated: AggregatedGradient,
        candidates: tuple[RouterCandidate, ...],
        split_threshold: int,
        merge_threshold: float,
    ) -> RouterDecision:
        others = "\n".join(f"router {c.router_id}: similarity {c.cosine:.3f}" for c in candidates)
        reply = self._ask(
            "optimizer",
            module_type=f"router agent {router.id} ({len(router.attributes)} attributes)",
            content=router.profile,
            gradient=aggregated.directives_text or "(all feedback positive)",
            instructions=(
                "Decide whether to split this router, merge it into another router, rewrite its "
                "profile, or leave it unchanged. Other routers:\n" + (others or "(none)") +
                "\nFirst line: one of `split`, `merge <router id>`, `rewrite`, `noop`. "
                "For rewrite, put the new profile on the following lines."
            ),
        )
        return self.parse_decision(reply, router.id, {c.router_id for c in candidates})

    @staticmethod
    def parse_decision(reply: str, self_id: int, known: set[int]) -> RouterDecision:
        lines = reply.strip().splitlines()
        head = lines[0].strip().lower() if lines else ""
        rest = "\n".join(lines[1:]).strip() or None
        m = re.match(r"^[`*]*\s*(split|merge|rewrite|noop|no-op)\b\W*(\d+)?", head)
        if m:
            action = m.group(1)
            if action == "split":
                return RouterDecision(RouterAction.SPLIT)
            if action == "rewrite":
                return RouterDecision(RouterAction.REWRITE, payload=rest)
            if action == "merge" and m.group(2) and int(m.group(2)) in known and int(m.group(2)) != self_id:
                return RouterDecision(RouterAction.MERGE, target=int(m.group(2)))
            if action in ("noop", "no-op"):
                return RouterDecision(RouterAction.NOOP)
        log.warning("unparseable router decision %r; falling back to noop", head[:60])
        return RouterDecision(RouterAction.NOOP)

    def _rerank(self, source_profile: str, candidates: tuple[tuple[str, str], ...], k: int) -> list[str]:
        reply = self._ask(
            "rerank",
            source_profile=source_profile or "(empty)",
            candidates=_numbered([p or "(empty)" for _, p in candidates]),
            k=k,
        )
        picked: list[str] = []
        for n in _numbers(reply):
            if 1 <= n <= len(candidates) and candidates[n - 1][0] not in picked:
                picked.append(candidates[n - 1][0])
        if not picked:
            log.warning("unparseable rerank reply; using similarity order")
            return [key for key, _ in candidates[:k]]
        return picked[:k]

    def _rank(self, user_profile: str, candidates: tuple[tuple[ClientId, str], ...]) -> list[ClientId]:
        for _attempt in range(2):
            reply = self._ask(
                "rank",
                user_profile=user_profile or "(empty)",
                candidates=_numbered([p or "(empty)" for _, p in candidates]),
                n=len(candidates),
            )
            order = [n for n in _numbers(reply) if 1 <= n <= len(candidates)]
            if sorted(order) == list(range(1, len(candidates) + 1)):
                return [candidates[n - 1][0] for n in order]
        log.warning("malformed ranking reply twice; falling back to overlap ordering")
        return self._fallback._rank(user_profile, candidates)
