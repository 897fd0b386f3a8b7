"""Turn-based deliberation state machine.

One run loops over speaking turns 1..max_turns. After the utterance at every
multiple of ``vote_interval`` all twelve jurors vote (vote collection does
not consume a turn), then termination is checked in this order: unanimity,
early stop after ``patience_rounds`` consecutive zero-change rounds, turn
budget.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .agents import AgentContext, AgentError, JuryBackend, LlmSelector, ReplayBackend, make_backend, make_chat_client
from .domain import (
    ALL_JURORS,
    BUDGET_EXHAUSTED,
    EARLY_STOP,
    N_JURORS,
    UNANIMOUS,
    BackendKind,
    CaseFile,
    Condition,
    DeliberationRecord,
    Event,
    JurorId,
    Persona,
    RunConfig,
    SelectorPolicy,
    Termination,
    Utterance,
    Verdict,
    Vote,
    VoteChangeEvent,
    VoteRound,
    condition_personas,
    derive_vote_changes,
)
from .prompts import assemble_vote_prompt

logger = logging.getLogger(__name__)

# (transcript, turn) -> raw selector reply naming the next speaker
Selector = Callable[[Sequence[Event], int], str]
EventSink = Callable[[Event], None]

_JUROR_RE = re.compile(r"(?i)juror[ _]?(\d{1,2})")


@dataclass
class EngineState:
    turn: int = 0
    current_votes: dict[JurorId, Vote] = field(default_factory=dict)
    vote_rounds: list[VoteRound] = field(default_factory=list)
    unchanged_round_streak: int = 0
    spoken_since_last_round: set[JurorId] = field(default_factory=set)
    # minority camp at the start of the current vote window
    window_minority: frozenset[JurorId] = frozenset()


def minority_jurors(votes: Mapping[JurorId, Vote]) -> frozenset[JurorId]:
    """Jurors in the strictly smaller camp; empty when unanimous, tied or unknown."""
    if len(votes) < N_JURORS:
        return frozenset()
    counts = Counter(votes.values())
    if len(counts) < 2:
        return frozenset()
    (big, n_big), (small, n_small) = counts.most_common(2)
    if n_big == n_small:
        return frozenset()
    return frozenset(j for j, v in votes.items() if v is small)


def rotation_speaker(turn: int) -> JurorId:
    return JurorId(turn % N_JURORS + 1)


def parse_selection(raw: str) -> JurorId | None:
    match = _JUROR_RE.search(raw or "")
    if match is None:
        return None
    try:
        return JurorId(int(match.group(1)))
    except ValueError:
        return None


def select_next_speaker(
    state: EngineState,
    policy: SelectorPolicy,
    vote_interval: int,
    *,
    selector: Selector | None = None,
    transcript: Sequence[Event] = (),
) -> tuple[JurorId, str | None]:
    """Pick the speaker for ``state.turn``.

    Returns the juror and, for model-driven selection, the audit string
    (the raw selector reply, prefixed with ``fallback:`` when it did not
    name a valid juror and rotation was used instead).
    """
    turn = state.turn
    if policy is SelectorPolicy.ROUND_ROBIN:
        return rotation_speaker(turn), None

    if policy is SelectorPolicy.DISSENT_PRIORITY_ROTATION:
        window_start = (turn - 1) // vote_interval * vote_interval + 1
        slots_left = window_start + vote_interval - turn
        pending = sorted(state.window_minority - state.spoken_since_last_round)
        if pending and slots_left <= len(pending):
            return pending[0], None
        return rotation_speaker(turn), None

    if selector is None:
        raise ValueError("model-driven selection needs a selector")
    raw = selector(transcript, turn)
    chosen = parse_selection(raw)
    if chosen is None:
        return rotation_speaker(turn), f"fallback:{raw}"
    return chosen, raw


def run_vote_round(
    state: EngineState,
    backend: JuryBackend,
    personas: Mapping[JurorId, Persona],
    transcript: Sequence[Event],
    vote_prompt: str,
    initial_votes: Mapping[JurorId, Vote] | None = None,
) -> tuple[VoteRound, list[VoteChangeEvent]]:
    """Collect twelve ballots in juror-id order and update ``state``.

    Changes are diffed against the previous vote state; the very first round
    of an unconditioned run has no previous state and yields none.
    """
    frozen = tuple(transcript)
    ballots = []
    for juror in ALL_JURORS:
        ctx = AgentContext(
            juror=juror,
            persona=personas[juror],
            transcript=frozen,
            current_vote=state.current_votes.get(juror),
            turn=state.turn,
            initial_votes=initial_votes,
        )
        ballot = backend.cast_ballot(ctx, vote_prompt)
        if ballot.juror != juror:
            raise AgentError(f"ballot for {ballot.juror} returned when {juror} was asked")
        ballots.append(ballot)
    rnd = VoteRound(state.turn, tuple(ballots))
    prior = state.current_votes if len(state.current_votes) == N_JURORS else None
    changes = derive_vote_changes(prior, [rnd])

    state.unchanged_round_streak = 0 if changes else state.unchanged_round_streak + 1
    state.current_votes = rnd.votes
    state.vote_rounds.append(rnd)
    state.spoken_since_last_round = set()
    state.window_minority = minority_jurors(state.current_votes)
    return rnd, changes


def check_termination(state: EngineState, config: RunConfig) -> tuple[Verdict, str] | None:
    votes = set(state.current_votes.values())
    if len(state.current_votes) == N_JURORS and len(votes) == 1:
        return Verdict(votes.pop().value), UNANIMOUS
    if state.unchanged_round_streak >= config.patience_rounds:
        return Verdict.HUNG_JURY, EARLY_STOP
    if state.turn >= config.max_turns:
        return Verdict.HUNG_JURY, BUDGET_EXHAUSTED
    return None


def _default_selector(config: RunConfig, backend: JuryBackend) -> Selector | None:
    if config.selector_policy is not SelectorPolicy.MODEL_DRIVEN:
        return None
    if isinstance(backend, ReplayBackend):
        return backend.selection
    if config.backend_spec.kind is BackendKind.LLM_CHAT:
        return LlmSelector(make_chat_client(config.backend_spec, config))
    raise ValueError("model_driven selection with a scripted backend needs an explicit selector")


def run_deliberation(
    config: RunConfig,
    personas: Sequence[Persona],
    case_file: CaseFile,
    *,
    backend: JuryBackend | None = None,
    selector: Selector | None = None,
    sink: EventSink | None = None,
) -> DeliberationRecord:
    """Run one deliberation to termination and return its full record.

    Events are passed to ``sink`` as they happen, so an interrupted run
    leaves a usable prefix. Agent failures end the run with an aborted
    termination (no verdict) instead of raising.
    """
    conditioned = condition_personas(personas, config.condition)
    by_id = {p.id: p for p in conditioned}
    initial_votes: Optional[dict[JurorId, Vote]] = None
    if config.condition is not Condition.NO_INITIAL_VOTE:
        initial_votes = {p.id: p.initial_vote for p in conditioned}

    if backend is None:
        backend = make_backend(config.backend_spec, config, conditioned, case_file)
    if selector is None:
        selector = _default_selector(config, backend)
    vote_prompt = assemble_vote_prompt()

    state = EngineState(current_votes=dict(initial_votes or {}))
    state.window_minority = minority_jurors(state.current_votes)
    events: list[Event] = []
    changes: list[VoteChangeEvent] = []

    def emit(event: Event) -> None:
        events.append(event)
        if sink is not None:
            sink(event)

    outcome: tuple[Verdict | None, str, str] | None = None
    completed = 0
    try:
        for turn in range(1, config.max_turns + 1):
            state.turn = turn
            speaker, note = select_next_speaker(
                state, config.selector_policy, config.vote_interval, selector=selector, transcript=tuple(events)
            )
            ctx = AgentContext(
                juror=speaker,
                persona=by_id[speaker],
                transcript=tuple(events),
                current_vote=state.current_votes.get(speaker),
                turn=turn,
                initial_votes=initial_votes,
            )
            text = backend.speak(ctx)
            emit(Utterance(turn, speaker, text, note))
            state.spoken_since_last_round.add(speaker)
            completed = turn

            result = None
            if turn % config.vote_interval == 0:
                rnd, new_changes = run_vote_round(state, backend, by_id, events, vote_prompt, initial_votes)
                emit(rnd)
                changes += new_changes
                result = check_termination(state, config)
            elif turn == config.max_turns:
                result = check_termination(state, config)
            if result is not None:
                outcome = (result[0], result[1], "")
                break
    except AgentError as exc:
        logger.warning("run aborted at turn %d: %s", state.turn, exc)
        outcome = (None, exc.reason, str(exc))

    assert outcome is not None  # the budget check always fires at max_turns
    verdict, reason, detail = outcome
    emit(Termination(completed, verdict, reason, detail))
    return DeliberationRecord(
        config=config,
        events=tuple(events),
        verdict=verdict,
        total_turns=completed,
        vote_changes=tuple(changes),
        initial_votes=initial_votes,
    )
