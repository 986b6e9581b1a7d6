from __future__ import annotations

import csv
import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from recnet.errors import MissingField, ParseError, TruthMissing, UserTooShort
from recnet.evaluation.data import Dataset, Event, five_core, format_stats, ingest, parse_rows, sample_users
from recnet.evaluation.protocol import (
    KS,
    NEGATIVES,
    RepResult,
    embedding_corpus,
    make_split,
    mean,
    ndcg_at_k,
    summarize_reps,
    training_records,
)
from recnet.evaluation.sweep import CSV_HEADER, sweep
from recnet.evaluation.synthetic import gen_synthetic
from recnet.model import NetworkConfig

import oracles
from conftest import FIXTURES


def ev(ts, user, item, title=""):
    return Event(ts, user, item, title)


# -- ingestion ------------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(json.loads((FIXTURES / "malformed" / "expected.json").read_text())))
def test_malformed_corpus_reports_line(name):
    expected = json.loads((FIXTURES / "malformed" / "expected.json").read_text())[name]
    with pytest.raises(ParseError) as info:
        ingest(FIXTURES / "malformed" / name)
    assert type(info.value).__name__ == expected["error"]
    assert info.value.line == expected["line"]
    assert str(info.value).startswith(f"line {expected['line']}:")


def test_parse_rows_formats():
    amazon = ['{"reviewerID": "u1", "asin": "a1", "unixReviewTime": 5, "summary": "Nice", "reviewText": "ok"}']
    (e,) = parse_rows(amazon, "amazon")
    assert (e.user, e.item, e.timestamp, e.title) == ("u1", "a1", 5, "Nice")
    with pytest.raises(MissingField):
        parse_rows(['{"user": "u", "timestamp": 1}'])
    with pytest.raises(ValueError):
        parse_rows([], "csv")
    assert parse_rows(["", "  "]) == []


def test_dataset_dedupes_and_sorts():
    ds = Dataset.from_events("d", [ev(3, "u", "b"), ev(1, "u", "a"), ev(1, "u", "a")])
    assert [e.item for e in ds.events] == ["a", "b"]
    round_trip = Dataset.from_events("d", parse_rows(ds.to_jsonl().splitlines()))
    assert round_trip.events == ds.events


def test_cds_sample_stats():
    ds = ingest(FIXTURES / "cds_sample" / "reviews.jsonl", "amazon")
    assert format_stats(ds.stats()) == "users=100 items=613 interactions=800 sparsity=98.69%"


def test_five_core_cascades():
    core = [ev(t, f"c{u}", f"k{i}") for u in range(5) for t, i in enumerate(range(5))]
    fringe_users = [ev(10 + i, f"f{u}", f"x{i}") for u in range(4) for i in range(5)]
    short = [ev(30 + i, "short", f"x{i}") for i in range(4)]
    ds = Dataset.from_events("d", core + fringe_users + short)
    out = five_core(ds)
    # "short" goes (4 events); then x4 has only 4 users, then every f user drops to 4 events, ...
    assert out.users() == [f"c{u}" for u in range(5)]
    assert out.items() == [f"k{i}" for i in range(5)]
    single_pass = [e for e in ds.events if sum(1 for x in ds.events if x.user == e.user) >= 5]
    assert {e.user for e in single_pass} > set(out.users())  # one pass is not enough


def test_sample_users_is_seeded_and_truncates():
    ds = Dataset.from_events("d", [ev(t, f"u{u}", f"i{t}") for u in range(10) for t in range(6)])
    a = sample_users(ds, 4, seed=3, max_history=2)
    assert a == sample_users(ds, 4, seed=3, max_history=2)
    assert len(a.users()) == 4 and all(len(h) == 2 for h in a.histories().values())
    assert a.presampled


# -- synthetic ----------------------------------------------------------------------------


def test_synthetic_generator_is_deterministic_and_planted():
    a = gen_synthetic(groups=3, users_per_group=4, items_per_group=10, vocab_per_group=6, crossover_rate=0.0, seed=1)
    b = gen_synthetic(groups=3, users_per_group=4, items_per_group=10, vocab_per_group=6, crossover_rate=0.0, seed=1)
    assert a.to_jsonl() == b.to_jsonl()
    vocab = a.meta["vocab"]
    assert len({w for g in vocab for w in g}) == 18  # disjoint vocabularies
    for e in a.events:  # no crossover: every user stays inside their group
        assert e.user[:2] == e.item[:2]


def test_planted_fixture_matches_generator():
    params = json.loads((FIXTURES / "planted" / "generator.json").read_text())
    args = {k: v for k, v in params.items() if k != "vocab"}
    ds = gen_synthetic(**args)
    assert ds.to_jsonl() == (FIXTURES / "planted" / "dataset.jsonl").read_text()


# -- protocol ---------------------------------------------------------------------------------


def small_ds(users=12, items=20):
    return Dataset.from_events(
        "s", [ev(t * 10 + u, f"u{u}", f"i{(u + t) % items}", f"word{(u + t) % items} thing") for u in range(users) for t in range(3)]
    )


def test_make_split_leave_one_out():
    ds = small_ds()
    split = make_split(ds, seed=5, repetitions=2)
    for u, h in ds.histories().items():
        assert split.truth[u] == h[-1].item
        for rep in range(2):
            cands = split.candidates[rep][u]
            assert len(cands) == NEGATIVES + 1 and split.truth[u] in cands
            assert not set(cands) - {split.truth[u]} & {e.item for e in h}
    assert len(split.train) == len(ds.events) - len(ds.users())
    assert split.candidates[0] != split.candidates[1]
    assert make_split(ds, seed=5, repetitions=2) == split


def test_make_split_rejects_short_users():
    with pytest.raises(UserTooShort):
        make_split(Dataset.from_events("d", [ev(1, "u", "a")]), 0)


def test_training_records_negatives():
    ds = small_ds()
    recs = training_records(ds.events, ds, 0)
    hist = {u: {e.item for e in h} for u, h in ds.histories().items()}
    assert all(r.negative.raw not in hist[r.user.raw] for r in recs)
    assert recs == training_records(ds.events, ds, 0)


def test_embedding_corpus_excludes_held_out_titles():
    ds = Dataset.from_events("d", [ev(1, "u", "a", "alpha"), ev(2, "u", "b", "beta")])
    docs = embedding_corpus(ds, ds.events[:1])
    assert docs == ["alpha", "beta", "alpha"]


@pytest.mark.parametrize("rank,k", [(r, k) for r in range(1, 11) for k in KS])
def test_ndcg_closed_form(rank, k):
    ranked = [f"n{i}" for i in range(10)]
    ranked.insert(rank - 1, "truth")
    assert ndcg_at_k(ranked[:10], "truth", k) == pytest.approx(oracles.ndcg_closed_form(rank, k), abs=1e-15)


def test_ndcg_errors():
    with pytest.raises(TruthMissing):
        ndcg_at_k(["a", "b"], "c", 1)
    with pytest.raises(ValueError):
        ndcg_at_k(["a", "b"], "a", 3)


@given(st.integers(1, 10), st.integers(1, 10))
def test_ndcg_monotone_in_rank(r1, r2):
    ranked = lambda r: [f"n{i}" for i in range(r - 1)] + ["t"] + [f"m{i}" for i in range(10 - r)]
    if r1 < r2:
        assert ndcg_at_k(ranked(r1), "t", 10) > ndcg_at_k(ranked(r2), "t", 10)


def test_mean_and_summary():
    reps = [RepResult("full", i, {1: v, 5: v, 10: v}, {}) for i, v in enumerate((0.1, 0.2, 0.4))]
    assert summarize_reps(reps)[5] == pytest.approx(0.7 / 3, abs=1e-12)
    assert mean([]) == 0.0


# -- sweeps --------------------------------------------------------------------------------


def test_sweep_csv_and_failure_isolation():
    ds = gen_synthetic(groups=2, users_per_group=6, items_per_group=12, vocab_per_group=5, crossover_rate=0.0, seed=0, events_per_user=3)
    cfg = NetworkConfig(k_init=2, update_size=4)

    def factory(net):
        if net.variant == "no_filter":
            raise RuntimeError("boom")
        return None, None

    result = sweep(ds, ["full", "no_filter", "no_cpr_em"], cfg, repetitions=2, factory=factory)
    assert set(result.results) == {"full", "no_cpr_em"} and "no_filter" in result.failures
    rows = list(csv.reader(io.StringIO(result.to_csv())))
    assert tuple(rows[0]) == CSV_HEADER
    assert [r[2] for r in rows[1:]] == ["0", "1", "mean"] * 2
    doc = json.loads(result.to_json())
    assert doc["failures"]["no_filter"].startswith("RuntimeError")
    assert "FAILED" in result.table()
    parallel = sweep(ds, ["full", "no_cpr_em"], cfg, repetitions=2, parallelism=4)
    serial = sweep(ds, ["full", "no_cpr_em"], cfg, repetitions=2)
    assert parallel.to_csv() == serial.to_csv()
