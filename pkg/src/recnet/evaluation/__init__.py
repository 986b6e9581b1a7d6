"""Datasets, the planted-community generator, and the leave-one-out harness."""

from .data import Dataset, Event, five_core, ingest, sample_users
from .protocol import EvalSplit, make_split, ndcg_at_k, rank_candidates
from .sweep import SweepResult, sweep
from .synthetic import gen_synthetic

__all__ = [
    "Dataset",
    "EvalSplit",
    "Event",
    "SweepResult",
    "five_core",
    "gen_synthetic",
    "ingest",
    "make_split",
    "ndcg_at_k",
    "rank_candidates",
    "sample_users",
    "sweep",
]
