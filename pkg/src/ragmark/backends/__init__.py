"""Embedding and generation backends: deterministic local doubles and HTTP clients."""

from .embedding import BackendStatus, EmbedRequest, Embedder, MockEmbedder, MockGeometry, RemoteEmbedder
from .generation import (
    GenerationRequest,
    Generator,
    RemoteGenerator,
    SamplingParams,
    ScriptedGenerator,
    ScriptedRule,
)

__all__ = [
    "BackendStatus",
    "EmbedRequest",
    "Embedder",
    "MockEmbedder",
    "MockGeometry",
    "RemoteEmbedder",
    "GenerationRequest",
    "Generator",
    "RemoteGenerator",
    "SamplingParams",
    "ScriptedGenerator",
    "ScriptedRule",
]
