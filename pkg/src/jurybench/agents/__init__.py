"""Pluggable juror backends: scripted simulator, chat-completions LLM, replay."""

from __future__ import annotations

from typing import Any, Sequence

from ..domain import BackendKind, BackendSpec, CaseFile, Persona, RunConfig
from .base import (
    AgentContext,
    AgentError,
    JuryBackend,
    ReplayMismatchError,
    StructuredOutputError,
    TransportError,
)
from .llm import ChatClient, LlmChatBackend, LlmSelector, make_chat_client, parse_ballot
from .replay import ReplayBackend
from .scripted import ScriptedBackend, load_preset, preset_names, scripted_flip_probability


def make_backend(
    spec: BackendSpec,
    config: RunConfig,
    personas: Sequence[Persona],
    case_file: CaseFile,
    **llm_kwargs: Any,
) -> JuryBackend:
    """Instantiate the backend for one run (never shared across runs)."""
    if spec.kind is BackendKind.SCRIPTED:
        return ScriptedBackend(spec.scripted_params, config.seed, config.temperature, case_file)
    if spec.kind is BackendKind.REPLAY:
        return ReplayBackend(spec.source_record)
    client = make_chat_client(spec, config, **llm_kwargs)
    return LlmChatBackend(client, config, personas, case_file)


__all__ = [
    "AgentContext",
    "AgentError",
    "ChatClient",
    "JuryBackend",
    "LlmChatBackend",
    "LlmSelector",
    "ReplayBackend",
    "ReplayMismatchError",
    "ScriptedBackend",
    "StructuredOutputError",
    "TransportError",
    "load_preset",
    "make_backend",
    "make_chat_client",
    "parse_ballot",
    "preset_names",
    "scripted_flip_probability",
]
