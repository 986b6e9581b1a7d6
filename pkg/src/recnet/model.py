"""Domain values shared by every part of the network.

All types are frozen; the engine "mutates" state by swapping in new values,
which is what makes a failed step trivially roll back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import ConfigError
from .text import MAX_ATTRIBUTES, extract_tokens, is_normalized, normalize_attribute

NORM_TOLERANCE = 1e-6


class Kind(str, Enum):
    USER = "user"
    ITEM = "item"


@dataclass(frozen=True, order=True)
class ClientId:
    kind: Kind
    raw: str

    def __post_init__(self) -> None:
        if not isinstance(self.kind, Kind):
            object.__setattr__(self, "kind", Kind(self.kind))
        if not self.raw:
            raise ValueError("client id must be non-empty")

    @classmethod
    def user(cls, raw: str) -> ClientId:
        return cls(Kind.USER, raw)

    @classmethod
    def item(cls, raw: str) -> ClientId:
        return cls(Kind.ITEM, raw)

    @property
    def key(self) -> str:
        return f"{self.kind.value}:{self.raw}"

    @classmethod
    def parse(cls, key: str) -> ClientId:
        kind, _, raw = key.partition(":")
        return cls(Kind(kind), raw)

    def __str__(self) -> str:
        return self.key

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "raw": self.raw}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ClientId:
        return cls(Kind(d["kind"]), d["raw"])


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    _array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding has non-finite entries")
        norm = math.sqrt(float(arr @ arr))
        if norm != 0.0 and abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"embedding norm {norm} is neither 0 nor 1")
        arr.setflags(write=False)
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "_array", arr)

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def is_zero(self) -> bool:
        return not np.any(self._array)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> EmbeddingVector:
        """L2-normalize ``arr`` (zero stays zero) and wrap it."""
        arr = np.asarray(arr, dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if norm > 0.0:
            arr = arr / norm
        return cls(tuple(arr.tolist()))

    @classmethod
    def zeros(cls, dim: int) -> EmbeddingVector:
        return cls((0.0,) * dim)

    def to_dict(self) -> dict:
        return {"values": list(self.values), "dim": self.dim}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> EmbeddingVector:
        vec = cls(tuple(float(v) for v in d["values"]))
        if vec.dim != d["dim"]:
            raise ValueError("embedding dim field disagrees with values")
        return vec


@dataclass(frozen=True)
class PropagatedMessage:
    router_id: int | str
    router_profile: str
    router_attributes: frozenset[str]
    seq: int = -1

    def to_dict(self) -> dict:
        return {
            "router_id": self.router_id,
            "router_profile": self.router_profile,
            "router_attributes": sorted(self.router_attributes),
            "seq": self.seq,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PropagatedMessage:
        return cls(d["router_id"], d["router_profile"], frozenset(d["router_attributes"]), d["seq"])


@dataclass(frozen=True)
class MessageBuffer:
    """Bounded LIFO cache of propagated router messages, newest first."""

    capacity: int
    entries: tuple[PropagatedMessage, ...] = ()
    next_seq: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("buffer capacity must be positive")

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "entries": [m.to_dict() for m in self.entries],
            "next_seq": self.next_seq,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MessageBuffer:
        return cls(
            d["capacity"],
            tuple(PropagatedMessage.from_dict(m) for m in d["entries"]),
            d.get("next_seq", 0),
        )


class Action(str, Enum):
    ALLOW = "allow"
    DENY = "deny"


@dataclass(frozen=True)
class FilterRule:
    action: Action
    pattern: str

    def __post_init__(self) -> None:
        if not isinstance(self.action, Action):
            object.__setattr__(self, "action", Action(self.action))
        object.__setattr__(self, "pattern", normalize_attribute(self.pattern))

    def matches(self, token: str) -> bool:
        return token == self.pattern or token in self.pattern.split()

    def render(self) -> str:
        return f"{self.action.value}:{self.pattern}"

    def to_dict(self) -> dict:
        return {"action": self.action.value, "pattern": self.pattern}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> FilterRule:
        return cls(Action(d["action"]), d["pattern"])


@dataclass(frozen=True)
class FilterMemory:
    rules: tuple[FilterRule, ...] = ()
    max_rules: int = 16

    def __post_init__(self) -> None:
        if self.max_rules < 1:
            raise ValueError("max_rules must be positive")

    def render(self) -> str:
        return "\n".join(r.render() for r in self.rules)

    def to_dict(self) -> dict:
        return {"rules": [r.to_dict() for r in self.rules], "max_rules": self.max_rules}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> FilterMemory:
        return cls(tuple(FilterRule.from_dict(r) for r in d["rules"]), d["max_rules"])


@dataclass(frozen=True)
class ClientAgent:
    id: ClientId
    profile: str
    attributes: frozenset[str]
    buffer: MessageBuffer
    filter_memory: FilterMemory
    interaction_count: int = 0

    @classmethod
    def create(
        cls,
        cid: ClientId,
        profile: str,
        *,
        buffer_capacity: int = 5,
        max_rules: int = 16,
        max_attributes: int = MAX_ATTRIBUTES,
    ) -> ClientAgent:
        return cls(
            cid,
            profile,
            frozenset(extract_tokens(profile, max_attributes)),
            MessageBuffer(buffer_capacity),
            FilterMemory(max_rules=max_rules),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id.to_dict(),
            "profile": self.profile,
            "attributes": sorted(self.attributes),
            "buffer": self.buffer.to_dict(),
            "filter_memory": self.filter_memory.to_dict(),
            "interaction_count": self.interaction_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ClientAgent:
        return cls(
            ClientId.from_dict(d["id"]),
            d["profile"],
            frozenset(d["attributes"]),
            MessageBuffer.from_dict(d["buffer"]),
            FilterMemory.from_dict(d["filter_memory"]),
            d["interaction_count"],
        )


@dataclass(frozen=True)
class RouterAgent:
    id: int
    profile: str
    attributes: frozenset[str]
    embedding: EmbeddingVector
    generation: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "profile": self.profile,
            "attributes": sorted(self.attributes),
            "embedding": self.embedding.to_dict(),
            "generation": self.generation,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RouterAgent:
        return cls(
            d["id"],
            d["profile"],
            frozenset(d["attributes"]),
            EmbeddingVector.from_dict(d["embedding"]),
            d["generation"],
        )


@dataclass(frozen=True)
class InteractionRecord:
    user: ClientId
    positive: ClientId
    negative: ClientId
    timestamp: int = 0

    def __post_init__(self) -> None:
        if self.user.kind is not Kind.USER:
            raise ValueError("record user must be a user id")
        if self.positive.kind is not Kind.ITEM or self.negative.kind is not Kind.ITEM:
            raise ValueError("record candidates must be item ids")
        if self.positive == self.negative:
            raise ValueError("positive and negative items must differ")

    def to_dict(self) -> dict:
        return {
            "user": self.user.to_dict(),
            "positive": self.positive.to_dict(),
            "negative": self.negative.to_dict(),
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> InteractionRecord:
        return cls(
            ClientId.from_dict(d["user"]),
            ClientId.from_dict(d["positive"]),
            ClientId.from_dict(d["negative"]),
            d["timestamp"],
        )


class ModuleKind(str, Enum):
    CLIENT_PROFILE = "client_profile"
    FILTER_MEM = "filter_mem"
    ROUTER = "router"


@dataclass(frozen=True)
class ModuleRef:
    kind: ModuleKind
    client: ClientId | None = None
    router: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.kind, ModuleKind):
            object.__setattr__(self, "kind", ModuleKind(self.kind))
        if self.kind is ModuleKind.ROUTER:
            if self.router is None or self.client is not None:
                raise ValueError("router module refs carry a router id only")
        elif self.client is None or self.router is not None:
            raise ValueError("client module refs carry a client id only")

    @classmethod
    def profile(cls, cid: ClientId) -> ModuleRef:
        return cls(ModuleKind.CLIENT_PROFILE, client=cid)

    @classmethod
    def filter_mem(cls, cid: ClientId) -> ModuleRef:
        return cls(ModuleKind.FILTER_MEM, client=cid)

    @classmethod
    def of_router(cls, rid: int) -> ModuleRef:
        return cls(ModuleKind.ROUTER, router=rid)

    def __str__(self) -> str:
        if self.kind is ModuleKind.ROUTER:
            return f"router:{self.router}"
        return f"{self.kind.value}:{self.client}"

    def to_dict(self) -> dict:
        return {
            "target": self.kind.value,
            "client": self.client.to_dict() if self.client else None,
            "router": self.router,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ModuleRef:
        client = ClientId.from_dict(d["client"]) if d.get("client") else None
        return cls(ModuleKind(d["target"]), client, d.get("router"))


@dataclass(frozen=True)
class TextualGradient:
    module_ref: ModuleRef
    reward_text: str
    gradient_text: str

    @property
    def is_empty(self) -> bool:
        return not self.gradient_text.strip()

    def to_dict(self) -> dict:
        return {
            "module_ref": self.module_ref.to_dict(),
            "reward_text": self.reward_text,
            "gradient_text": self.gradient_text,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TextualGradient:
        return cls(ModuleRef.from_dict(d["module_ref"]), d["reward_text"], d["gradient_text"])


@dataclass(frozen=True)
class NetworkConfig:
    k_init: int = 20
    tau: float = 0.8
    buffer_capacity: int = 5
    update_size: int = 16
    embedding_dim: int = 256
    seed: int = 0
    variant: str = "full"
    backend: str = "mock"
    split_threshold: int = 24
    merge_threshold: float = 0.92
    max_rules: int = 16
    max_attributes: int = MAX_ATTRIBUTES
    embedder: str = "cooccurrence"
    em_top_k: int = 5
    em_top_p: int = 10
    snapshot_every: int = 0

    def __post_init__(self) -> None:
        from .variants import VARIANTS  # local: variants imports nothing from here

        problems = []
        if self.k_init < 1:
            problems.append("k_init must be >= 1")
        if not 0.0 < self.tau < 1.0:
            problems.append("tau must lie in (0, 1)")
        if self.buffer_capacity < 1:
            problems.append("buffer_capacity must be >= 1")
        if self.update_size < 1:
            problems.append("update_size must be >= 1")
        if self.embedding_dim < 8:
            problems.append("embedding_dim must be >= 8")
        if self.split_threshold < 1:
            problems.append("split_threshold must be >= 1")
        if not 0.0 < self.merge_threshold < 1.0:
            problems.append("merge_threshold must lie in (0, 1)")
        if self.max_rules < 1 or self.max_attributes < 1:
            problems.append("max_rules and max_attributes must be >= 1")
        if self.variant not in VARIANTS:
            problems.append(f"unknown variant {self.variant!r}")
        if self.embedder not in ("hash", "cooccurrence", "remote"):
            problems.append(f"unknown embedder {self.embedder!r}")
        if self.backend not in ("mock", "http"):
            problems.append(f"unknown backend {self.backend!r}")
        if self.em_top_k < 1 or self.em_top_p < self.em_top_k:
            problems.append("need 1 <= em_top_k <= em_top_p")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> NetworkConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **changes: Any) -> NetworkConfig:
        return replace(self, **changes)


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    detail: str = ""


def validate_network(
    clients: Iterable[ClientAgent],
    routers: Iterable[RouterAgent],
    config: NetworkConfig,
    embedder=None,
) -> list[Violation]:
    """Every invariant breach in the given network; ``[]`` means consistent.

    Router embedding coherence is only checked when ``embedder`` is given.
    """
    out: list[Violation] = []
    seen: set[ClientId] = set()
    for c in clients:
        name = c.id.key
        if c.id in seen:
            out.append(Violation("DuplicateClient", name))
        seen.add(c.id)
        if len(c.buffer.entries) > c.buffer.capacity:
            out.append(
                Violation("BufferOverCapacity", name, f"{len(c.buffer.entries)} > {c.buffer.capacity}")
            )
        seqs = [m.seq for m in c.buffer.entries]
        if any(a <= b for a, b in zip(seqs, seqs[1:])):
            out.append(Violation("BufferOrder", name, f"seqs {seqs} not strictly decreasing"))
        if len(c.filter_memory.rules) > c.filter_memory.max_rules:
            out.append(Violation("FilterOverCapacity", name))
        for rule in c.filter_memory.rules:
            if not is_normalized(rule.pattern):
                out.append(Violation("InvalidRule", name, rule.pattern))
        expected = frozenset(extract_tokens(c.profile, config.max_attributes))
        if c.attributes != expected:
            out.append(Violation("AttributeMismatch", name))
        if c.interaction_count < 0:
            out.append(Violation("NegativeInteractionCount", name))
    router_ids: set[int] = set()
    for r in routers:
        name = f"router:{r.id}"
        if r.id in router_ids:
            out.append(Violation("DuplicateRouter", name))
        router_ids.add(r.id)
        if not r.attributes:
            out.append(Violation("EmptyRouterAttributes", name))
        if any(not is_normalized(a) for a in r.attributes):
            out.append(Violation("InvalidAttribute", name))
        if r.embedding.dim != config.embedding_dim:
            out.append(Violation("EmbeddingDimension", name, f"{r.embedding.dim}"))
        if embedder is not None and embedder.embed(r.profile) != r.embedding:
            out.append(Violation("StaleRouterEmbedding", name))
    return out
