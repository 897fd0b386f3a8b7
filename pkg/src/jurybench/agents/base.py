from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol

from ..domain import (
    REPLAY_MISMATCH,
    STRUCTURED_OUTPUT_FAILURE,
    TRANSPORT_FAILURE,
    Ballot,
    Event,
    JurorId,
    Persona,
    Vote,
)


@dataclass(frozen=True)
class AgentContext:
    """What a juror sees when asked to speak or vote."""

    juror: JurorId
    persona: Persona
    transcript: tuple[Event, ...]
    current_vote: Vote | None
    turn: int
    # publicly known conditioned votes before the first round (None if unconditioned)
    initial_votes: Mapping[JurorId, Vote] | None = None


class AgentError(RuntimeError):
    """A backend failure that aborts the run."""

    reason = "agent_failure"


class TransportError(AgentError):
    reason = TRANSPORT_FAILURE

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt{'s' if attempts != 1 else ''})")
        self.attempts = attempts


class StructuredOutputError(AgentError):
    reason = STRUCTURED_OUTPUT_FAILURE

    def __init__(self, juror: JurorId, attempts: int, last_reply: str):
        super().__init__(
            f"structured-output failure: no valid ballot from {juror} in {attempts} attempts; "
            f"last reply: {last_reply[:200]!r}"
        )
        self.juror = juror
        self.attempts = attempts
        self.last_reply = last_reply


class ReplayMismatchError(AgentError):
    reason = REPLAY_MISMATCH


class JuryBackend(Protocol):
    def speak(self, ctx: AgentContext) -> str: ...

    def cast_ballot(self, ctx: AgentContext, vote_prompt: str) -> Ballot: ...
