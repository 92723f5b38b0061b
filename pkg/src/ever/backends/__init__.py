from .base import Backend, CompletionRequest, DecodeSettings, make_request
from .scripted import ScriptedBackend
from .sim import (
    FactSpec,
    SimBackend,
    SimEvent,
    SimWorld,
    make_world,
    sim_generate,
    world_corpus,
    world_dataset,
)
from .wire import ChatCompletionClient, WireSettings

__all__ = [
    "Backend",
    "ChatCompletionClient",
    "CompletionRequest",
    "DecodeSettings",
    "FactSpec",
    "ScriptedBackend",
    "SimBackend",
    "SimEvent",
    "SimWorld",
    "WireSettings",
    "make_request",
    "make_world",
    "sim_generate",
    "world_corpus",
    "world_dataset",
]
