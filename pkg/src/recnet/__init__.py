"""Self-evolving preference propagation between user and item agents."""

from .engine import Engine
from .model import ClientAgent, ClientId, InteractionRecord, NetworkConfig, RouterAgent

__all__ = ["ClientAgent", "ClientId", "Engine", "InteractionRecord", "NetworkConfig", "RouterAgent"]
__version__ = "0.1.0"
