"""Leave-one-out evaluation: splits, candidate lists, NDCG, ranking."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from ..backends.base import PromptBackend
from ..embedding import EmbeddingBackend
from ..engine import COLD_THRESHOLD, Engine
from ..errors import PreconditionError, TruthMissing, UserTooShort
from ..model import ClientId, InteractionRecord, NetworkConfig
from .data import Dataset, Event

NEGATIVES = 9
KS = (1, 5, 10)

Factory = Callable[[NetworkConfig], "tuple[PromptBackend, EmbeddingBackend | None]"]


@dataclass(frozen=True)
class EvalSplit:
    train: tuple[Event, ...]
    truth: dict[str, str]
    candidates: tuple[dict[str, tuple[str, ...]], ...]  # one map per repetition
    seed: int

    @property
    def repetitions(self) -> int:
        return len(self.candidates)


def rep_seed(seed: int, rep: int) -> int:
    return seed ^ rep


def make_split(ds: Dataset, seed: int, repetitions: int = 3, negatives: int = NEGATIVES) -> EvalSplit:
    hist = ds.histories()
    for u, h in hist.items():
        if len(h) < 2:
            raise UserTooShort(f"user {u} has {len(h)} event(s); leave-one-out needs 2")
    truth = {u: h[-1].item for u, h in hist.items()}
    held = {(h[-1].user, h[-1].item, h[-1].timestamp) for h in hist.values()}
    train = tuple(e for e in ds.events if (e.user, e.item, e.timestamp) not in held)
    catalog = ds.items()
    reps = []
    for r in range(repetitions):
        rng = np.random.default_rng(rep_seed(seed, r))
        lists = {}
        for u in sorted(hist):
            seen = {e.item for e in hist[u]}
            pool = [i for i in catalog if i not in seen]
            if len(pool) < negatives:
                raise UserTooShort(f"user {u}: only {len(pool)} items available as negatives")
            negs = [pool[i] for i in rng.choice(len(pool), negatives, replace=False)]
            cands = [truth[u]] + negs
            lists[u] = tuple(cands[i] for i in rng.permutation(len(cands)))
        reps.append(lists)
    return EvalSplit(train, truth, tuple(reps), seed)


def ndcg_at_k(ranked: Sequence[str], truth: str, k: int) -> float:
    """Single-relevant-item NDCG: 1/log2(1 + rank) inside the cutoff, else 0."""
    if truth not in ranked:
        raise TruthMissing(f"{truth!r} is not among the ranked candidates")
    if not 1 <= k <= len(ranked):
        raise ValueError(f"k={k} outside 1..{len(ranked)}")
    rank = list(ranked).index(truth) + 1
    return 1.0 / math.log2(1 + rank) if rank <= k else 0.0


def mean(values: Iterable[float]) -> float:
    vals = list(values)
    return math.fsum(vals) / len(vals) if vals else 0.0


def initial_profiles(ds: Dataset) -> dict[ClientId, str]:
    """Users start blank; items start from their title."""
    titles = ds.item_titles()
    profiles = {ClientId.user(u): "" for u in ds.users()}
    profiles.update({ClientId.item(i): titles.get(i, "") for i in ds.items()})
    return profiles


def embedding_corpus(ds: Dataset, train: Sequence[Event]) -> list[str]:
    """Item titles plus one document per user made of their training titles."""
    titles = ds.item_titles()
    docs = [titles[i] for i in sorted(titles)]
    per_user: dict[str, list[str]] = {}
    for e in train:
        per_user.setdefault(e.user, []).append(e.title or titles.get(e.item, ""))
    docs += [" ".join(per_user[u]) for u in sorted(per_user)]
    return [d for d in docs if d]


def training_records(train: Sequence[Event], ds: Dataset, seed: int) -> list[InteractionRecord]:
    """One record per training event, with a seeded negative from outside the user's history."""
    rng = np.random.default_rng(seed)
    catalog = ds.items()
    seen = {u: {e.item for e in h} for u, h in ds.histories().items()}
    out = []
    for e in train:
        if e.negative:
            neg = e.negative
        else:
            pool = [i for i in catalog if i not in seen[e.user]]
            if not pool:
                raise PreconditionError(f"user {e.user} has interacted with every item; no negative to sample")
            neg = pool[int(rng.integers(len(pool)))]
        out.append(InteractionRecord(ClientId.user(e.user), ClientId.item(e.item), ClientId.item(neg), e.timestamp))
    return out


def is_cold(engine: Engine, cid: ClientId) -> bool:
    c = engine.state.clients.get(cid.key)
    return c is None or c.interaction_count <= COLD_THRESHOLD


def rank_candidates(
    engine: Engine, user: str, candidates: Sequence[str], augment_cold_user: bool = True
) -> list[str]:
    uid = ClientId.user(user)
    if augment_cold_user and is_cold(engine, uid) and uid not in engine.augmented:
        engine.augment_cold_start(uid)
    with engine.backend.in_stage("eval"):
        merged = engine.merged_profile(uid, stage="eval")
        clients = engine.state.clients
        pairs = [
            (ClientId.item(i), clients[ClientId.item(i).key].profile if ClientId.item(i).key in clients else "")
            for i in candidates
        ]
        ranked = engine.backend.rank(merged, pairs)
    return [cid.raw for cid in ranked]


@dataclass(frozen=True)
class RepResult:
    variant: str
    repetition: int
    ndcg: dict[int, float]
    report: dict
    cold: dict | None = None


def train_engine(
    ds: Dataset, split: EvalSplit, config: NetworkConfig, rep: int, factory: Factory | None = None
) -> Engine:
    seed = rep_seed(config.seed, rep)
    config = config.with_(seed=seed)
    backend, embedder = factory(config) if factory else (None, None)
    engine = Engine.from_profiles(
        config, initial_profiles(ds), backend, embedder, corpus=embedding_corpus(ds, split.train)
    )
    engine.run(training_records(split.train, ds, seed))
    return engine


def score_users(
    engine: Engine, split: EvalSplit, rep: int, users: Iterable[str] | None = None
) -> dict[int, float]:
    per_user: dict[int, list[float]] = {k: [] for k in KS}
    for u in sorted(users if users is not None else split.truth):
        ranked = rank_candidates(engine, u, split.candidates[rep][u])
        for k in KS:
            per_user[k].append(ndcg_at_k(ranked, split.truth[u], k))
    return {k: mean(v) for k, v in per_user.items()}


def evaluate_once(
    ds: Dataset, split: EvalSplit, config: NetworkConfig, rep: int, factory: Factory | None = None
) -> RepResult:
    engine = train_engine(ds, split, config, rep, factory)
    report = engine.report()
    return RepResult(config.variant, rep, score_users(engine, split, rep), report)


def evaluate_cold_items(
    ds: Dataset, split: EvalSplit, config: NetworkConfig, rep: int, factory: Factory | None = None
) -> dict:
    """NDCG@{1,5,10} for users whose held-out item is cold, before and after augmentation.

    Every cold item among those users' candidates is augmented (targets and
    negatives alike), each exactly once.
    """
    engine = train_engine(ds, split, config, rep, factory)
    users = [u for u in sorted(split.truth) if is_cold(engine, ClientId.item(split.truth[u]))]
    if not users:
        return {"users": 0, "plain": {}, "augmented": {}}
    plain = score_users(engine, split, rep, users)
    done: set[str] = set()
    for u in users:
        for i in split.candidates[rep][u]:
            cid = ClientId.item(i)
            if i not in done and is_cold(engine, cid) and cid not in engine.augmented:
                engine.augment_cold_start(cid)
                done.add(i)
    augmented = score_users(engine, split, rep, users)
    return {"users": len(users), "augmented_items": len(done), "plain": plain, "augmented": augmented}


def summarize_reps(results: Sequence[RepResult]) -> dict[int, float]:
    return {k: mean(r.ndcg[k] for r in results) for k in KS}

