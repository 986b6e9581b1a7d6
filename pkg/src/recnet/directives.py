"""The textual-gradient directive grammar.

One directive per line::

    add:<attr>          remove:<attr>
    rule:allow:<attr>   rule:deny:<attr>
    router:split        router:merge:<id>     router:rewrite

Unknown or malformed lines are skipped with a warning, never fatal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import EmptyAfterNormalization, MalformedGradient
from .model import Action, FilterMemory, FilterRule
from .text import normalize_attribute

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Directive:
    op: str  # add | remove | rule | router
    arg: str = ""
    action: str = ""  # allow/deny for rules, split/merge/rewrite for routers

    def render(self) -> str:
        if self.op in ("add", "remove"):
            return f"{self.op}:{self.arg}"
        if self.op == "rule":
            return f"rule:{self.action}:{self.arg}"
        if self.action == "merge":
            return f"router:merge:{self.arg}"
        return f"router:{self.action}"


def parse_directive(line: str) -> Directive:
    parts = [p.strip() for p in line.strip().split(":")]
    head = parts[0].lower() if parts else ""
    try:
        if head in ("add", "remove") and len(parts) >= 2:
            return Directive(head, normalize_attribute(":".join(parts[1:])))
        if head == "rule" and len(parts) >= 3 and parts[1].lower() in ("allow", "deny"):
            return Directive("rule", normalize_attribute(":".join(parts[2:])), parts[1].lower())
        if head == "router" and len(parts) >= 2:
            action = parts[1].lower()
            if action in ("split", "rewrite") and len(parts) == 2:
                return Directive("router", action=action)
            if action == "merge" and len(parts) == 3 and parts[2].isdigit():
                return Directive("router", parts[2], "merge")
    except EmptyAfterNormalization as exc:
        raise MalformedGradient(f"empty attribute in directive {line!r}") from exc
    raise MalformedGradient(f"unknown directive {line!r}")


def parse_directives(text: str) -> tuple[list[Directive], list[str]]:
    """Parse every line; returns (directives, warnings)."""
    out: list[Directive] = []
    warnings: list[str] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            out.append(parse_directive(line))
        except MalformedGradient as exc:
            warnings.append(str(exc))
            log.warning("skipping directive: %s", exc)
    return out, warnings


def render_directives(directives: Iterable[Directive]) -> str:
    return "\n".join(d.render() for d in directives)


def apply_profile_directives(
    tokens: Sequence[str], directives: Iterable[Directive], cap: int
) -> list[str]:
    """Ordered add/remove over a token list; adds go to the front (most recent)."""
    current = list(tokens)
    for d in directives:
        if d.op == "add":
            for tok in d.arg.split():
                if tok in current:
                    current.remove(tok)
                current.insert(0, tok)
        elif d.op == "remove":
            for tok in d.arg.split():
                if tok in current:
                    current.remove(tok)
        else:
            log.warning("directive %s does not apply to a profile; skipped", d.render())
    return current[:cap]


def apply_rule_directives(filt: FilterMemory, directives: Iterable[Directive]) -> FilterMemory:
    rules = list(filt.rules)
    for d in directives:
        if d.op != "rule":
            log.warning("directive %s does not apply to a filter memory; skipped", d.render())
            continue
        rule = FilterRule(Action(d.action), d.arg)
        if rule in rules:
            continue
        rules.append(rule)
        if len(rules) > filt.max_rules:
            rules.pop(0)
    return FilterMemory(tuple(rules), filt.max_rules)
