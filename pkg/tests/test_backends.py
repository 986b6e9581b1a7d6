from __future__ import annotations

import json

import httpx
import pytest

from recnet.backends.base import (
    AggregatedGradient,
    GradientContext,
    RouterAction,
    RouterCandidate,
    RouterDecision,
)
from recnet.backends.http import HttpBackend, load_template, render_template
from recnet.backends.mock import MockBackend
from recnet.directives import parse_directive, parse_directives
from recnet.embedding import HashEmbedder
from recnet.errors import ConfigError, MalformedGradient, MalformedResponse, NetworkError, RateLimited
from recnet.model import (
    Action,
    ClientId,
    FilterMemory,
    FilterRule,
    InteractionRecord,
    ModuleRef,
    PropagatedMessage,
    RouterAgent,
)

U, POS, NEG = ClientId.user("u"), ClientId.item("pos"), ClientId.item("neg")
REC = InteractionRecord(U, POS, NEG)


# -- mock semantics --------------------------------------------------------------


def test_mock_summarize_example():
    assert MockBackend().summarize("community interests: jazz", {"vinyl"}) == "community interests: jazz, vinyl"


def test_mock_summarize_without_new_attributes_is_identity():
    assert MockBackend().summarize("community interests: jazz", set()) == "community interests: jazz"


def test_mock_extract_example():
    assert set(MockBackend().extract("Loves vinyl jazz. Loves jazz.")) == {"vinyl", "jazz"}


def test_mock_predict_example():
    out = MockBackend().predict("jazz vinyl", (POS, "jazz"), (NEG, "garden"))
    assert out.chosen == POS


def test_mock_predict_tie_goes_to_smaller_id():
    out = MockBackend().predict("jazz", (POS, "garden"), (NEG, "garden"))
    assert out.chosen == NEG  # "neg" < "pos"


def test_mock_merge_respects_deny_and_allow():
    msgs = (
        PropagatedMessage(0, "community interests: metal, riffs", frozenset()),
        PropagatedMessage(1, "community interests: vinyl", frozenset()),
    )
    filt = FilterMemory((FilterRule(Action.DENY, "metal"),))
    merged = MockBackend().merge(msgs, filt, "jazz")
    assert merged == "interests: jazz, riffs, vinyl"
    capped = MockBackend(max_attributes=2).merge(
        msgs, FilterMemory((FilterRule(Action.ALLOW, "vinyl"),)), "jazz"
    )
    assert capped == "interests: jazz, vinyl"


def test_mock_merge_empty_buffer_returns_profile():
    assert MockBackend().merge((), FilterMemory(), "jazz things") == "jazz things"


def _ctx(reward, user="jazz", merged="jazz metal", pos="jazz vinyl", neg="metal"):
    chosen = POS if reward else NEG
    return GradientContext(REC, reward, chosen, user, merged, pos, neg)


def test_mock_gradient_positive_reward_is_empty():
    g = MockBackend().gradient(ModuleRef.profile(U), "jazz", _ctx(1))
    assert g.is_empty


def test_mock_gradient_directives_on_failure():
    b = MockBackend()
    ctx = _ctx(0)
    assert b.gradient(ModuleRef.filter_mem(U), "", ctx).gradient_text == "rule:deny:metal"
    assert b.gradient(ModuleRef.profile(U), "jazz", ctx).gradient_text == "add:vinyl"
    router = b.gradient(ModuleRef.of_router(2), "community interests: metal", ctx).gradient_text
    assert router.splitlines() == ["remove:metal", "router:rewrite"]
    item = b.gradient(ModuleRef.profile(POS), "vinyl", ctx).gradient_text
    assert item == "add:jazz"


def test_mock_optimizers_apply_directives():
    b = MockBackend()
    assert b.optimize_profile("interests: jazz", "add:vinyl\nremove:jazz") == "interests: vinyl"
    assert b.optimize_profile("jazz", "") == "jazz"
    filt = b.optimize_filter(FilterMemory(), "rule:deny:metal\nrule:deny:metal")
    assert filt.rules == (FilterRule(Action.DENY, "metal"),)


def test_filter_capacity_evicts_oldest():
    b = MockBackend()
    filt = b.optimize_filter(FilterMemory(max_rules=3), "\n".join(f"rule:deny:w{i}" for i in range(4)))
    assert [r.pattern for r in filt.rules] == ["w1", "w2", "w3"]


def _router(rid, attrs):
    emb = HashEmbedder(16)
    prof = MockBackend().summarize("", set(attrs))
    return RouterAgent(rid, prof, frozenset(attrs), emb.embed(prof))


def _agg(rid, negatives=0):
    return AggregatedGradient(rid, "", (), negatives, negatives, 0)


def test_mock_router_policy_order():
    b = MockBackend()
    big = _router(0, [f"a{i}" for i in range(5)])
    assert b.optimize_router(big, _agg(0), (), 4, 0.9).action is RouterAction.SPLIT
    r = _router(1, ["jazz"])
    close = (RouterCandidate(5, 0.95), RouterCandidate(3, 0.99), RouterCandidate(7, 0.1))
    d = b.optimize_router(r, _agg(1), close, 4, 0.9)
    assert d == RouterDecision(RouterAction.MERGE, target=3)
    assert b.optimize_router(r, _agg(1, 2), (), 4, 0.9).action is RouterAction.REWRITE
    assert b.optimize_router(r, _agg(1), (), 4, 0.9).action is RouterAction.NOOP


def test_counters_track_stage_and_kind():
    b = MockBackend()
    with b.in_stage("router"):
        b.summarize("", {"x"})
    b.extract("jazz")
    b.optimize_profile("a", "add:b")
    assert b.stage_calls["router"]["summarize"] == 1
    assert b.stage_calls["client"] == {"extract": 1, "optimizer": 1}
    assert sum(b.calls.values()) == 3


def test_mock_rank_and_rerank():
    b = MockBackend()
    ranked = b.rank("jazz vinyl", [(ClientId.item("z"), "jazz vinyl"), (ClientId.item("a"), "metal")])
    assert [c.raw for c in ranked] == ["z", "a"]
    assert b.rerank("jazz", [("k2", "metal"), ("k1", "jazz")], 1) == ["k1"]


# -- directives --------------------------------------------------------------------


def test_directive_grammar():
    assert parse_directive("add: Jazz-Fusion").arg == "jazz fusion"
    assert parse_directive("router:merge:4").render() == "router:merge:4"
    for bad in ("add:", "rule:maybe:x", "router:merge:x", "explode:now"):
        with pytest.raises(MalformedGradient):
            parse_directive(bad)
    ok, warnings = parse_directives("add:a1\nnonsense\n\nremove:b1")
    assert [d.render() for d in ok] == ["add:a1", "remove:b1"]
    assert len(warnings) == 1


# -- http backend -------------------------------------------------------------------


def _reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})


def _http(handler, monkeypatch, **kw):
    monkeypatch.setenv("RECNET_TEST_KEY", "secret")
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return HttpBackend("http://llm.test/v1", "m", "RECNET_TEST_KEY", client=client, sleep=lambda s: None, **kw)


def test_http_missing_key(monkeypatch):
    monkeypatch.delenv("RECNET_TEST_KEY", raising=False)
    with pytest.raises(ConfigError):
        HttpBackend("http://llm.test/v1", "m", "RECNET_TEST_KEY")


def test_http_retries_503_then_succeeds(monkeypatch):
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(503) if len(seen) == 1 else _reply("jazz, vinyl")

    b = _http(handler, monkeypatch)
    assert b.extract("I like jazz on vinyl") == ("jazz", "vinyl")
    assert b.http_calls == 2 and b.calls["extract"] == 1
    assert seen[0]["model"] == "m" and "jazz on vinyl" in seen[0]["messages"][0]["content"]


def test_http_rate_limit_honours_retry_after(monkeypatch):
    delays = []
    responses = iter([httpx.Response(429, headers={"retry-after": "2.5"}), _reply("summary")])
    monkeypatch.setenv("RECNET_TEST_KEY", "secret")
    client = httpx.Client(transport=httpx.MockTransport(lambda r: next(responses)))
    b = HttpBackend("http://llm.test/v1", "m", "RECNET_TEST_KEY", client=client, sleep=delays.append)
    assert b.summarize("", {"jazz"}) == "summary"
    assert delays == [2.5]


def test_http_rate_limit_exhausted(monkeypatch):
    b = _http(lambda r: httpx.Response(429), monkeypatch)
    with pytest.raises(RateLimited):
        b.summarize("", {"jazz"})
    assert b.http_calls == 3


def test_http_client_error_not_retried(monkeypatch):
    b = _http(lambda r: httpx.Response(401), monkeypatch)
    with pytest.raises(NetworkError):
        b.extract("jazz")
    assert b.http_calls == 1


def test_http_bad_shape(monkeypatch):
    b = _http(lambda r: httpx.Response(200, json={"nope": 1}), monkeypatch)
    with pytest.raises(MalformedResponse):
        b.extract("jazz")


def test_http_predict_parses_item_b(monkeypatch):
    b = _http(lambda r: _reply("Item B, because of the saxophone."), monkeypatch)
    # candidates are presented sorted by id: a = "neg", b = "pos"
    assert b.predict("jazz", (POS, "sax"), (NEG, "metal")).chosen == POS


def test_http_predict_unparseable_counts_as_wrong(monkeypatch):
    b = _http(lambda r: _reply("I cannot decide."), monkeypatch)
    out = b.predict("jazz", (POS, "sax"), (NEG, "metal"))
    assert out.chosen == NEG and not out.parsed


def test_parse_choice_variants():
    a, b = ClientId.item("a1"), ClientId.item("b1")
    assert HttpBackend.parse_choice("A", a, b) == a
    assert HttpBackend.parse_choice("I pick b1", a, b) == b


def test_parse_decision():
    assert HttpBackend.parse_decision("merge 3", 1, {2, 3}) == RouterDecision(RouterAction.MERGE, target=3)
    assert HttpBackend.parse_decision("merge 9", 1, {2, 3}).action is RouterAction.NOOP
    d = HttpBackend.parse_decision("rewrite\nnew text", 1, set())
    assert d.action is RouterAction.REWRITE and d.payload == "new text"
    assert HttpBackend.parse_decision("**split**", 1, set()).action is RouterAction.SPLIT
    assert HttpBackend.parse_decision("gibberish", 1, set()).action is RouterAction.NOOP


def test_http_rank_falls_back_after_two_bad_replies(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        return _reply("2, 2")

    b = _http(handler, monkeypatch)
    cands = [(ClientId.item("x"), "metal"), (ClientId.item("y"), "jazz")]
    assert [c.raw for c in b.rank("jazz", cands)] == ["y", "x"]
    assert len(calls) == 2


def test_http_rank_parses_permutation(monkeypatch):
    b = _http(lambda r: _reply("2\n1"), monkeypatch)
    cands = [(ClientId.item("x"), "metal"), (ClientId.item("y"), "jazz")]
    assert [c.raw for c in b.rank("jazz", cands)] == ["y", "x"]


def test_http_filter_optimizer_keeps_rule_lines_only(monkeypatch):
    b = _http(lambda r: _reply("rule:deny:metal\nadd:jazz\nsure thing"), monkeypatch)
    filt = b.optimize_filter(FilterMemory(), "rule:deny:metal")
    assert filt.rules == (FilterRule(Action.DENY, "metal"),)


def test_templates_render_every_placeholder():
    t = load_template("summarize")
    out = render_template(t, router_profile="p", attributes="a")
    assert "{{" not in out
    with pytest.raises(KeyError):
        render_template("{{ missing }}")
