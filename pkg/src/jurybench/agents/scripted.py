"""Seeded parametric jurors standing in for an LLM at desk scale.

Each juror accumulates *pressure* from utterances by jurors currently voting
the other way, weighted by the speaker's persuasiveness and decaying by
``PRESSURE_DECAY`` per turn. At every vote round the juror flips with
probability ``openness * logistic(pressure + noise - anchor_strength * conviction)``,
where the Gaussian noise term has standard deviation
``noise_scale * temperature``. Conviction starts at ``conviction_init`` and
becomes ``CONVERTED_CONVICTION`` once the juror has switched sides. All draws are keyed on (seed, turn, juror), so
a run is a pure function of its configuration.
"""

from __future__ import annotations

import math
import random
from functools import lru_cache
from typing import Mapping, Sequence

import yaml

from ..domain import (
    Ballot,
    CaseFile,
    ConfigError,
    JurorId,
    JurorParams,
    ScriptedProfile,
    Utterance,
    Vote,
    VoteRound,
    _data_text,
)
from .base import AgentContext

PRESSURE_DECAY = 0.9
CONVERTED_CONVICTION = 1.0

_OPENERS = (
    "Let me put it plainly.",
    "Hear me out.",
    "Think about this for a moment.",
    "Here is what bothers me.",
    "Let's look at the facts.",
    "I keep coming back to one thing.",
)


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def scripted_flip_probability(conviction: float, pressure: float, params: JurorParams) -> float:
    """Probability that a juror abandons its current vote at a vote round."""
    if pressure < 0:
        raise ValueError(f"pressure must be >= 0, got {pressure}")
    if params.openness == 0.0:
        return 0.0
    return params.openness * _logistic(pressure - params.anchor_strength * conviction)


@lru_cache(maxsize=1)
def _preset_table() -> dict:
    return yaml.safe_load(_data_text("presets.yaml"))["presets"]


def preset_names() -> list[str]:
    return sorted(_preset_table())


def load_preset(name: str) -> ScriptedProfile:
    table = _preset_table()
    if name not in table:
        raise ConfigError("preset", f"unknown scripted preset {name!r}; choose from {preset_names()}")
    raw = table[name]
    defaults = raw.get("default", {})
    overrides = {int(k): v for k, v in (raw.get("jurors") or {}).items()}
    jurors = tuple(
        JurorParams(**{k: float(v) for k, v in {**defaults, **overrides.get(i, {})}.items()})
        for i in range(1, 13)
    )
    return ScriptedProfile(jurors=jurors, noise_scale=float(raw.get("noise_scale", 0.0)), name=name)


def _rng(seed: int, turn: int, juror: int, purpose: str) -> random.Random:
    # str seeds are hashed with SHA-512, independent of PYTHONHASHSEED
    return random.Random(f"jurybench:{seed}:{turn}:{juror}:{purpose}")


class ScriptedBackend:
    """Jury backend driven by a :class:`ScriptedProfile`."""

    def __init__(
        self,
        profile: ScriptedProfile,
        seed: int,
        temperature: float,
        case_file: CaseFile | None = None,
    ):
        self.profile = profile
        self.seed = seed
        self.temperature = temperature
        self.case_file = case_file

    @property
    def noise_sd(self) -> float:
        return self.profile.noise_scale * self.temperature

    def pressure_and_conviction(self, ctx: AgentContext) -> tuple[float, float]:
        """Decayed opposing-camp pressure on ``ctx.juror`` and its conviction, as of ``ctx.turn``."""
        me = ctx.juror
        known: Mapping[JurorId, Vote] = dict(ctx.initial_votes or {})
        own = known.get(me)
        conviction = self.profile[me].conviction_init
        pressure = 0.0
        last_turn = 0
        for event in ctx.transcript:
            if isinstance(event, Utterance):
                pressure *= PRESSURE_DECAY ** (event.turn - last_turn)
                last_turn = event.turn
                if event.speaker != me and own is not None:
                    theirs = known.get(event.speaker)
                    if theirs is not None and theirs is not own:
                        pressure += self.profile[event.speaker].persuasiveness
            elif isinstance(event, VoteRound):
                votes = event.votes
                if own is not None and votes.get(me) is not own:
                    pressure = 0.0
                    conviction = CONVERTED_CONVICTION
                known = votes
                own = votes.get(me)
        return pressure * PRESSURE_DECAY ** max(0, ctx.turn - last_turn), conviction

    def pressure(self, ctx: AgentContext) -> float:
        return self.pressure_and_conviction(ctx)[0]

    def flip_probability(self, ctx: AgentContext) -> float:
        params = self.profile[ctx.juror]
        pressure, conviction = self.pressure_and_conviction(ctx)
        noise = _rng(self.seed, ctx.turn, ctx.juror, "noise").gauss(0.0, 1.0) * self.noise_sd
        return scripted_flip_probability(conviction, max(0.0, pressure + noise), params)

    def cast_ballot(self, ctx: AgentContext, vote_prompt: str = "") -> Ballot:
        params = self.profile[ctx.juror]
        draw = _rng(self.seed, ctx.turn, ctx.juror, "ballot").random()
        if ctx.current_vote is None:
            vote = Vote.NOT_GUILTY if draw < params.prior_not_guilty else Vote.GUILTY
            reasoning = f"Having weighed the evidence from scratch, I vote {vote.value}."
        elif draw < self.flip_probability(ctx):
            vote = ctx.current_vote.opposite
            reasoning = f"The arguments in this room have changed my mind, so I now vote {vote.value}."
        else:
            vote = ctx.current_vote
            reasoning = f"Nothing I have heard outweighs my reading of the evidence, so I stay {vote.value}."
        return Ballot(ctx.juror, vote, reasoning)

    def speak(self, ctx: AgentContext) -> str:
        persona = ctx.persona
        args: Sequence[str] = persona.key_arguments
        spoken = sum(1 for e in ctx.transcript if isinstance(e, Utterance) and e.speaker == ctx.juror)
        rng = _rng(self.seed, ctx.turn, ctx.juror, "speak")
        argument = args[spoken] if spoken < len(args) else rng.choice(args)
        parts = [rng.choice(_OPENERS), argument]
        if self.case_file is not None and self.case_file.evidence:
            item = rng.choice(self.case_file.evidence)
            parts.append(f"Consider evidence #{item.id}, {item.name}.")
        if ctx.current_vote is not None:
            parts.append(f"For now my vote is {ctx.current_vote.value}.")
        return " ".join(parts)

