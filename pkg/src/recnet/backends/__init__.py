from .base import (
    PROMPT_KINDS,
    AggregatedGradient,
    GradientContext,
    PredictOutcome,
    PromptBackend,
    RouterAction,
    RouterCandidate,
    RouterDecision,
)
from .http import HttpBackend
from .mock import MockBackend

__all__ = [
    "PROMPT_KINDS",
    "AggregatedGradient",
    "GradientContext",
    "HttpBackend",
    "MockBackend",
    "PredictOutcome",
    "PromptBackend",
    "RouterAction",
    "RouterCandidate",
    "RouterDecision",
]
