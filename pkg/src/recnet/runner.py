"""Config-driven runs shared by the CLI and golden verification."""

from __future__ import annotations

from typing import Callable

from .config import CliConfig, ComponentFactory
from .engine import Engine
from .errors import ConfigError
from .evaluation.data import Dataset, five_core, ingest
from .evaluation.protocol import embedding_corpus, initial_profiles, training_records


def load_dataset(cfg: CliConfig) -> Dataset:
    if not cfg.dataset:
        raise ConfigError("config has no dataset path")
    ds = ingest(cfg.dataset, cfg.format)
    return five_core(ds) if cfg.five_core else ds


def run_config(
    cfg: CliConfig,
    factory: ComponentFactory | None = None,
    snapshot_hook: Callable[[int, dict], None] | None = None,
    resume: dict | None = None,
) -> Engine:
    """Stream the whole dataset through a fresh (or resumed) engine.

    Raises RunAborted on backend failure; the engine is returned on success.
    """
    factory = factory or ComponentFactory(cfg)
    backend, embedder = factory(cfg.network)
    ds = load_dataset(cfg)
    records = training_records(ds.events, ds, cfg.network.seed)
    if resume is not None:
        engine = Engine.from_snapshot(resume, backend, embedder)
        records = records[engine.state.records_processed :]
    else:
        engine = Engine.from_profiles(
            cfg.network, initial_profiles(ds), backend, embedder, corpus=embedding_corpus(ds, ds.events)
        )
    engine.run(records, snapshot_hook=snapshot_hook)
    return engine
