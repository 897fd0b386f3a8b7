from __future__ import annotations

from ..domain import Ballot, DeliberationRecord, JurorId, Utterance, VoteRound
from .base import AgentContext, ReplayMismatchError


class ReplayBackend:
    """Replays the utterances and ballots of a stored record, byte for byte."""

    def __init__(self, source: DeliberationRecord):
        self.source = source
        self._utterances = {u.turn: u for u in source.utterances}
        self._ballots = {(r.turn, b.juror): b for r in source.vote_rounds for b in r.ballots}

    def speak(self, ctx: AgentContext) -> str:
        utt = self._utterances.get(ctx.turn)
        if utt is None:
            raise ReplayMismatchError(f"source record has no utterance at turn {ctx.turn}")
        if utt.speaker != ctx.juror:
            raise ReplayMismatchError(
                f"turn {ctx.turn}: engine selected {ctx.juror}, source speaker was {utt.speaker}"
            )
        return utt.text

    def cast_ballot(self, ctx: AgentContext, vote_prompt: str = "") -> Ballot:
        ballot = self._ballots.get((ctx.turn, ctx.juror))
        if ballot is None:
            raise ReplayMismatchError(f"source record has no ballot for {ctx.juror} at turn {ctx.turn}")
        return ballot

    def selection(self, transcript, turn: int) -> str:
        """Selector stand-in: the recorded speaker (or raw selector reply) for ``turn``."""
        utt = self._utterances.get(turn)
        if utt is None:
            raise ReplayMismatchError(f"source record has no utterance at turn {turn}")
        return utt.selection if utt.selection is not None else str(utt.speaker)
