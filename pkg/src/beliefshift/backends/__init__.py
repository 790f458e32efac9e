from beliefshift.backends.base import (
    Backend,
    Context,
    FrameRef,
    GenerationParams,
    PromptTemplateSet,
    count_words,
    truncate_to_budget,
)
from beliefshift.backends.remote import RemoteBackend, RemoteConfig
from beliefshift.backends.scripted import ScriptedBackend, WorldScript, deviation_world

__all__ = [
    "Backend",
    "Context",
    "FrameRef",
    "GenerationParams",
    "PromptTemplateSet",
    "RemoteBackend",
    "RemoteConfig",
    "ScriptedBackend",
    "WorldScript",
    "count_words",
    "deviation_world",
    "truncate_to_budget",
]
