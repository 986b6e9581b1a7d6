"""Helpers for building engines on the checked-in fixtures."""

from __future__ import annotations

from functools import lru_cache

from recnet.config import load_config
from recnet.engine import Engine
from recnet.evaluation.data import Dataset
from recnet.evaluation.protocol import embedding_corpus, initial_profiles, training_records
from recnet.runner import load_dataset

from conftest import FIXTURES


@lru_cache(maxsize=None)
def fixture_data(name: str) -> tuple:
    cfg = load_config(FIXTURES / name / "config.json")
    ds = load_dataset(cfg)
    return cfg, ds, tuple(training_records(ds.events, ds, cfg.network.seed))


def make_engine(name: str, backend=None, **overrides) -> tuple[Engine, list]:
    cfg, ds, records = fixture_data(name)
    net = cfg.network.with_(**overrides) if overrides else cfg.network
    engine = Engine.from_profiles(net, initial_profiles(ds), backend, corpus=embedding_corpus(ds, ds.events))
    return engine, list(records)


def planted() -> tuple:
    cfg, ds, _ = fixture_data("planted")
    return cfg, ds


__all__ = ["Dataset", "fixture_data", "make_engine", "planted"]
