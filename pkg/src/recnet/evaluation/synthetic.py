"""Planted-community generator.

Each group owns a disjoint vocabulary; item titles are drawn from their
group's words and users mostly interact inside their own group. Because
the structure is known, propagation benefits can be checked by brute force.
"""

from __future__ import annotations

import numpy as np

from ..text import stopwords
from .data import Dataset, Event

_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


def make_vocab(groups: int, per_group: int, rng: np.random.Generator) -> list[list[str]]:
    """Pairwise-disjoint pronounceable word lists, one per group."""
    used = set(stopwords())
    out = []
    for _ in range(groups):
        words: list[str] = []
        while len(words) < per_group:
            syllables = int(rng.integers(2, 4))
            w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syllables))
            if w not in used:
                used.add(w)
                words.append(w)
        out.append(words)
    return out


def gen_synthetic(
    groups: int = 4,
    users_per_group: int = 25,
    items_per_group: int = 40,
    vocab_per_group: int = 12,
    crossover_rate: float = 0.1,
    seed: int = 0,
    events_per_user: int = 8,
    title_words: int = 3,
    cold_items_per_group: int = 0,
) -> Dataset:
    """Build a planted-community dataset.

    With ``cold_items_per_group`` > 0, each group also gets items that occur
    only as some in-group users' final (held-out) event.
    """
    if groups < 2:
        raise ValueError("need at least 2 groups")
    if not 0.0 <= crossover_rate <= 1.0:
        raise ValueError("crossover_rate must lie in [0, 1]")
    if events_per_user > items_per_group:
        raise ValueError("events_per_user cannot exceed items_per_group (histories use distinct items)")
    if cold_items_per_group > users_per_group:
        raise ValueError("cold items need one in-group user each")
    rng = np.random.default_rng(seed)
    vocab = make_vocab(groups, vocab_per_group, rng)

    items: list[list[str]] = []
    titles: dict[str, str] = {}
    for g in range(groups):
        ids = []
        for j in range(items_per_group):
            iid = f"g{g}i{j:03d}"
            words = rng.choice(vocab[g], size=min(title_words, vocab_per_group), replace=False)
            titles[iid] = " ".join(words)
            ids.append(iid)
        items.append(ids)
    cold: list[list[str]] = []
    for g in range(groups):
        ids = []
        for j in range(cold_items_per_group):
            iid = f"g{g}c{j:03d}"
            words = rng.choice(vocab[g], size=min(title_words, vocab_per_group), replace=False)
            titles[iid] = " ".join(words)
            ids.append(iid)
        cold.append(ids)

    users = [(f"g{g}u{j:03d}", g) for g in range(groups) for j in range(users_per_group)]
    plans: dict[str, list[str]] = {}
    for uid, g in users:
        seq: list[str] = []
        for _ in range(events_per_user):
            grp = g
            if groups > 1 and rng.random() < crossover_rate:
                grp = int(rng.choice([h for h in range(groups) if h != g]))
            choices = [i for i in items[grp] if i not in seq]
            seq.append(choices[int(rng.integers(len(choices)))])
        plans[uid] = seq
    for g in range(groups):
        for j, iid in enumerate(cold[g]):
            plans[f"g{g}u{j:03d}"][-1] = iid

    # Interleave users round by round so the stream mixes communities.
    events = []
    ts = 1
    order = [u for u, _ in users]
    for r in range(events_per_user):
        for k in rng.permutation(len(order)):
            uid = order[k]
            iid = plans[uid][r]
            words = titles[iid].split()
            review = " ".join(rng.choice(words, size=min(2, len(words)), replace=False))
            events.append(Event(ts, uid, iid, titles[iid], review))
            ts += 1
    ds = Dataset.from_events(f"synthetic-g{groups}-s{seed}", events, presampled=True)
    return Dataset(ds.name, ds.events, True, {"vocab": vocab, "groups": groups})
