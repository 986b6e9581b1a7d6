"""JSON run configuration: network parameters plus dataset, output and backend settings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .backends import HttpBackend, MockBackend, PromptBackend
from .embedding import EmbeddingBackend, RemoteEmbedder
from .errors import ConfigError
from .model import NetworkConfig

NETWORK_KEYS = {f.name for f in fields(NetworkConfig)}


@dataclass(frozen=True)
class CliConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    dataset: str | None = None
    format: str = "internal"
    five_core: bool = False
    output_dir: str = "out"
    variants: tuple[str, ...] = ("full",)
    repetitions: int = 3
    parallelism: int = 1
    base_url: str = ""
    model: str = ""
    api_key_env: str = "RECNET_API_KEY"
    embed_base_url: str = ""
    embed_model: str = ""

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if not self.variants:
            raise ConfigError("variants must not be empty")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CliConfig:
        own = {f.name for f in fields(cls)} - {"network"}
        unknown = set(d) - own - NETWORK_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        net = NetworkConfig.from_dict({k: v for k, v in d.items() if k in NETWORK_KEYS})
        rest = {k: v for k, v in d.items() if k in own}
        if "variants" in rest:
            v = rest["variants"]
            rest["variants"] = tuple(v.split(",") if isinstance(v, str) else v)
        try:
            return cls(network=net, **rest)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = self.network.to_dict()
        for f in fields(self):
            if f.name != "network":
                v = getattr(self, f.name)
                out[f.name] = list(v) if isinstance(v, tuple) else v
        return dict(sorted(out.items()))

    def with_overrides(self, overrides: Mapping[str, Any]) -> CliConfig:
        return CliConfig.from_dict({**self.to_dict(), **overrides})

    def dump(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_config(path: str | Path) -> CliConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    ds = raw.get("dataset")
    if ds and not Path(ds).is_absolute():
        # Relative dataset paths are relative to the config file.
        raw["dataset"] = str((Path(path).parent / ds).resolve())
    return CliConfig.from_dict(raw)


class ComponentFactory:
    """Builds a fresh backend (and, for remote embeddings, an embedder) per engine."""

    def __init__(self, cfg: CliConfig) -> None:
        self.cfg = cfg

    def __call__(self, network: NetworkConfig) -> tuple[PromptBackend, EmbeddingBackend | None]:
        cfg = self.cfg
        if network.backend == "http":
            backend: PromptBackend = HttpBackend(
                cfg.base_url, cfg.model, cfg.api_key_env, max_attributes=network.max_attributes
            )
        else:
            backend = MockBackend(network.max_attributes, network.seed)
        embedder = None
        if network.embedder == "remote":
            embedder = RemoteEmbedder(
                cfg.embed_base_url or cfg.base_url, cfg.embed_model, network.embedding_dim, cfg.api_key_env
            )
        return backend, embedder

    def check(self) -> None:
        """Fail fast on missing credentials or endpoints."""
        self(self.cfg.network)


def parse_override(text: str) -> tuple[str, Any]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} must look like key=value")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key.strip(), parsed


__all__ = ["CliConfig", "ComponentFactory", "load_config", "parse_override"]
