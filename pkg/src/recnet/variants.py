"""Ablation and propagation variants, expressed as feature gates.

Each variant switches off exactly the machinery its ablation removes; the
engine asks ``variant_gate(variant, feature)`` instead of testing names.
"""

from __future__ import annotations

from .errors import UnknownVariant

FEATURES = (
    "routers",           # router agents exist and mediate propagation
    "buffer",            # incoming messages are cached until the next interaction
    "filter",            # filter memory guides merging
    "fpo",               # gradients + optimizer run at all
    "opt_filter",        # filter memories receive gradients
    "opt_router",        # routers receive gradients and split/merge/rewrite
    "async",             # router stage is gated by update_size
    "point_to_point",    # dense retrieval of neighbour clients instead of routers
    "llm_rerank",        # neighbour list is re-ranked by a backend call
    "llm_summarize",     # propagated content is summarized once before sending
    "per_neighbor_content",  # one backend call per (client, neighbour) pair
)

_FULL = frozenset(FEATURES) - {"point_to_point", "llm_rerank", "llm_summarize", "per_neighbor_content"}
_P2P = (_FULL - {"routers", "opt_router"}) | {"point_to_point"}

VARIANTS: dict[str, frozenset[str]] = {
    "full": _FULL,
    "no_cpr_em": _P2P,
    "em_lr": _P2P | {"llm_rerank"},
    "em_lr_ls": _P2P | {"llm_rerank", "llm_summarize"},
    "no_router": _P2P | {"per_neighbor_content"},
    "no_ppr": _FULL - {"buffer", "filter", "opt_filter"},
    "no_buffer": _FULL - {"buffer"},
    "no_filter": _FULL - {"filter", "opt_filter"},
    "no_fpo": _FULL - {"fpo", "opt_filter", "opt_router"},
    "no_opt_filter": _FULL - {"opt_filter"},
    "no_opt_router": _FULL - {"opt_router"},
    "no_async": _FULL - {"async"},
}


def variant_gate(variant: str, feature: str) -> bool:
    try:
        enabled = VARIANTS[variant]
    except KeyError:
        raise UnknownVariant(variant) from None
    if feature not in FEATURES:
        raise KeyError(f"unknown feature {feature!r}")
    return feature in enabled
