"""Immutable domain types shared by every part of the package.

Also holds record validation, JSON (de)serialization of records and configs,
and loaders for the shipped persona / case-file data.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Union

import yaml

N_JURORS = 12
DISSENTER_INDEX = 8
N_EVIDENCE = 8
MAX_SEED = 2**64 - 1


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending input."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class DataError(ValueError):
    """Shipped or user-supplied scenario data failed validation."""


def _norm_token(value: str) -> str:
    return re.sub(r"[^a-z0-9]", "", value.lower())


class _ParseMixin:
    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = _norm_token(str(value))
        for member in cls:  # type: ignore[attr-defined]
            if key in (_norm_token(member.name), _norm_token(member.value)):
                return member
        choices = ", ".join(m.value for m in cls)  # type: ignore[attr-defined]
        raise ValueError(f"{value!r} is not one of: {choices}")


class Vote(_ParseMixin, str, enum.Enum):
    GUILTY = "GUILTY"
    NOT_GUILTY = "NOT_GUILTY"

    @property
    def opposite(self) -> Vote:
        return Vote.NOT_GUILTY if self is Vote.GUILTY else Vote.GUILTY

    def __str__(self) -> str:
        return self.value


class Verdict(_ParseMixin, str, enum.Enum):
    GUILTY = "GUILTY"
    NOT_GUILTY = "NOT_GUILTY"
    HUNG_JURY = "HUNG_JURY"

    def __str__(self) -> str:
        return self.value


class Condition(_ParseMixin, str, enum.Enum):
    BASELINE = "baseline"
    NO_INITIAL_VOTE = "no_initial_vote"
    OPEN_MINDED = "open_minded"

    def __str__(self) -> str:
        return self.value


class SelectorPolicy(_ParseMixin, str, enum.Enum):
    DISSENT_PRIORITY_ROTATION = "dissent_priority_rotation"
    ROUND_ROBIN = "round_robin"
    MODEL_DRIVEN = "model_driven"


class RhoPolicy(_ParseMixin, str, enum.Enum):
    SKIP = "skip"
    REPORT_ONE = "report_one"


class EvidenceCategory(_ParseMixin, str, enum.Enum):
    TESTIMONY = "Testimony"
    PHYSICAL = "Physical"
    CIRCUMSTANTIAL = "Circumstantial"


class BackendKind(_ParseMixin, str, enum.Enum):
    LLM_CHAT = "llm_chat"
    SCRIPTED = "scripted"
    REPLAY = "replay"


class JurorId(int):
    """Juror index 1..12, rendered as ``Juror_<n>``."""

    __slots__ = ()

    def __new__(cls, value: Union[int, str]) -> JurorId:
        if isinstance(value, JurorId):
            return value
        if isinstance(value, str):
            text = value.strip()
            match = re.fullmatch(r"(?i)juror[ _]?(\d+)|(\d+)", text)
            if match is None:
                raise ValueError(f"not a juror id: {value!r}")
            value = int(match.group(1) or match.group(2))
        elif isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"juror id must be int or str, got {type(value).__name__}")
        if not 1 <= value <= N_JURORS:
            raise ValueError(f"juror index out of range 1..{N_JURORS}: {value}")
        return super().__new__(cls, value)

    @property
    def index(self) -> int:
        return int(self)

    def __str__(self) -> str:
        return f"Juror_{int(self)}"

    __repr__ = __str__

    def __reduce__(self):
        return (JurorId, (int(self),))


ALL_JURORS: tuple[JurorId, ...] = tuple(JurorId(i) for i in range(1, N_JURORS + 1))
DISSENTER = JurorId(DISSENTER_INDEX)


# ---------------------------------------------------------------------------
# Scenario data


@dataclass(frozen=True)
class Persona:
    id: JurorId
    occupation: str
    personality: str
    speaking_style: str
    key_arguments: tuple[str, ...]
    emotional_triggers: tuple[str, ...] = ()
    initial_vote: Vote | None = None
    title: str = ""


@dataclass(frozen=True)
class EvidenceItem:
    id: int
    name: str
    category: EvidenceCategory
    description: str
    prosecution_argument: str


@dataclass(frozen=True)
class CaseFile:
    scene_setting: str
    case_summary: str
    evidence: tuple[EvidenceItem, ...]


def validate_personas(personas: Sequence[Persona], *, conditioned: bool = True) -> None:
    """Raise DataError unless ``personas`` is a complete, well-formed jury.

    With ``conditioned`` the initial votes must be the 11-1 opening tableau
    (Juror_8 alone NOT_GUILTY); otherwise every initial vote must be absent.
    """
    ids = [p.id for p in personas]
    if sorted(ids) != list(ALL_JURORS):
        raise DataError(f"expected personas for Juror_1..Juror_12, got {sorted(map(str, ids))}")
    for p in personas:
        for name in ("occupation", "personality", "speaking_style"):
            if not getattr(p, name).strip():
                raise DataError(f"{p.id}: field '{name}' is empty")
        if not p.key_arguments:
            raise DataError(f"{p.id}: field 'key_arguments' is empty")
    if conditioned:
        ng = [p.id for p in personas if p.initial_vote is Vote.NOT_GUILTY]
        g = [p.id for p in personas if p.initial_vote is Vote.GUILTY]
        if ng != [DISSENTER] or len(g) != N_JURORS - 1:
            raise DataError(
                "conditioned personas must have exactly one NOT_GUILTY initial vote "
                f"(Juror_8) and eleven GUILTY; got NOT_GUILTY={ng}"
            )
    elif any(p.initial_vote is not None for p in personas):
        raise DataError("unconditioned personas must not carry initial votes")


def validate_case_file(case_file: CaseFile) -> None:
    ids = [e.id for e in case_file.evidence]
    if ids != list(range(1, N_EVIDENCE + 1)):
        raise DataError(f"evidence ids must be 1..{N_EVIDENCE} in order, got {ids}")
    for e in case_file.evidence:
        if not isinstance(e.category, EvidenceCategory):
            raise DataError(f"evidence #{e.id}: bad category {e.category!r}")
        if not e.description.strip():
            raise DataError(f"evidence #{e.id}: field 'description' is empty")
    if not case_file.scene_setting.strip() or not case_file.case_summary.strip():
        raise DataError("case file needs scene_setting and case_summary")


def condition_personas(personas: Sequence[Persona], condition: Condition) -> tuple[Persona, ...]:
    """Apply vote conditioning: NoInitialVote strips every initial vote."""
    from dataclasses import replace

    out = tuple(sorted(personas, key=lambda p: p.id))
    if condition is Condition.NO_INITIAL_VOTE:
        out = tuple(replace(p, initial_vote=None) for p in out)
    return out


def _data_text(name: str) -> str:
    return resources.files("jurybench").joinpath("data").joinpath(name).read_text(encoding="utf-8")


def _load_yaml(path: str | Path | None, default_name: str) -> Any:
    text = Path(path).read_text(encoding="utf-8") if path is not None else _data_text(default_name)
    return yaml.safe_load(text)


def _require(mapping: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in mapping or mapping[key] is None:
        raise DataError(f"{where}: missing field '{key}'")
    return mapping[key]


def _text_list(value: Any) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        return (value,)
    return tuple(str(v) for v in value)


def load_personas(path: str | Path | None = None) -> tuple[Persona, ...]:
    raw = _load_yaml(path, "personas.yaml")
    personas = []
    for entry in _require(raw, "jurors", "personas"):
        where = f"persona {entry.get('id', '?')}"
        vote = entry.get("initial_vote")
        personas.append(
            Persona(
                id=JurorId(_require(entry, "id", where)),
                occupation=str(_require(entry, "occupation", where)),
                personality=str(_require(entry, "personality", where)),
                speaking_style=str(_require(entry, "speaking_style", where)),
                key_arguments=_text_list(_require(entry, "key_arguments", where)),
                emotional_triggers=_text_list(entry.get("emotional_triggers")),
                initial_vote=Vote.parse(vote) if vote is not None else None,
                title=str(entry.get("title", "")),
            )
        )
    personas.sort(key=lambda p: p.id)
    validate_personas(personas)
    return tuple(personas)


def load_case_file(path: str | Path | None = None) -> CaseFile:
    raw = _load_yaml(path, "case_file.yaml")
    items = []
    for entry in _require(raw, "evidence", "case file"):
        where = f"evidence {entry.get('id', '?')}"
        try:
            category = EvidenceCategory.parse(_require(entry, "category", where))
        except ValueError as exc:
            raise DataError(f"{where}: {exc}") from None
        items.append(
            EvidenceItem(
                id=int(_require(entry, "id", where)),
                name=str(_require(entry, "name", where)),
                category=category,
                description=str(_require(entry, "description", where)),
                prosecution_argument=str(_require(entry, "prosecution_argument", where)),
            )
        )
    case_file = CaseFile(
        scene_setting=str(_require(raw, "scene_setting", "case file")),
        case_summary=str(_require(raw, "case_summary", "case file")),
        evidence=tuple(items),
    )
    validate_case_file(case_file)
    return case_file


def load_defaults() -> dict[str, Any]:
    return yaml.safe_load(_data_text("defaults.yaml"))


DEFAULT_CANONICAL_FLIP_ORDER: tuple[JurorId, ...] = tuple(
    JurorId(i) for i in load_defaults()["canonical_flip_order"]
)


# ---------------------------------------------------------------------------
# Backends and run configuration


@dataclass(frozen=True)
class JurorParams:
    """Behavioral parameters of one scripted juror."""

    openness: float
    anchor_strength: float
    persuasiveness: float
    conviction_init: float
    # probability of a NOT_GUILTY first ballot when no vote is conditioned
    prior_not_guilty: float = 0.0

    def __post_init__(self):
        for name in ("openness", "conviction_init", "prior_not_guilty"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(name, f"must be in [0, 1], got {v}")
        for name in ("anchor_strength", "persuasiveness"):
            v = getattr(self, name)
            if not (v >= 0.0 and math.isfinite(v)):
                raise ConfigError(name, f"must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class ScriptedProfile:
    jurors: tuple[JurorParams, ...]
    noise_scale: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if len(self.jurors) != N_JURORS:
            raise ConfigError("scripted_params", f"need {N_JURORS} juror entries, got {len(self.jurors)}")
        if not (self.noise_scale >= 0.0 and math.isfinite(self.noise_scale)):
            raise ConfigError("noise_scale", f"must be finite and >= 0, got {self.noise_scale}")

    def __getitem__(self, juror: int) -> JurorParams:
        return self.jurors[int(juror) - 1]


@dataclass(frozen=True, eq=True)
class BackendSpec:
    kind: BackendKind
    model_name: str | None = None
    endpoint: str | None = None
    scripted_params: ScriptedProfile | None = None
    source_record: DeliberationRecord | None = None

    def __post_init__(self):
        if self.kind is BackendKind.LLM_CHAT:
            if not self.model_name:
                raise ConfigError("model_name", "required for llm_chat backends")
            if not self.endpoint:
                raise ConfigError("endpoint", "required for llm_chat backends")
        elif self.kind is BackendKind.SCRIPTED:
            if self.scripted_params is None:
                raise ConfigError("scripted_params", "required for scripted backends")
        elif self.kind is BackendKind.REPLAY:
            if self.source_record is None:
                raise ConfigError("source_record", "required for replay backends")

    @property
    def label(self) -> str:
        """Short model label used for grouping and directory names."""
        if self.kind is BackendKind.LLM_CHAT:
            return str(self.model_name)
        if self.kind is BackendKind.SCRIPTED:
            return f"scripted-{self.scripted_params.name}"
        return f"replay-{self.source_record.config.backend_spec.label}"


@dataclass(frozen=True)
class RunConfig:
    backend_spec: BackendSpec
    condition: Condition
    seed: int
    temperature: float = 0.9
    max_turns: int = 150
    vote_interval: int = 12
    patience_rounds: int = 3
    selector_policy: SelectorPolicy = SelectorPolicy.DISSENT_PRIORITY_ROTATION
    canonical_flip_order: tuple[JurorId, ...] = DEFAULT_CANONICAL_FLIP_ORDER
    rho_undefined_policy: RhoPolicy = RhoPolicy.SKIP

    def __post_init__(self):
        if not isinstance(self.condition, Condition):
            raise ConfigError("condition", f"expected Condition, got {self.condition!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed <= MAX_SEED:
            raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {self.seed!r}")
        if not (self.temperature >= 0.0 and math.isfinite(self.temperature)):
            raise ConfigError("temperature", f"must be finite and >= 0, got {self.temperature}")
        for name in ("max_turns", "vote_interval", "patience_rounds"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if self.vote_interval > self.max_turns:
            raise ConfigError("vote_interval", "must not exceed max_turns")
        order = tuple(JurorId(j) for j in self.canonical_flip_order)
        if len(set(order)) != len(order):
            raise ConfigError("canonical_flip_order", "contains duplicates")
        if DISSENTER in order:
            raise ConfigError("canonical_flip_order", "must not contain Juror_8")
        object.__setattr__(self, "canonical_flip_order", order)


# ---------------------------------------------------------------------------
# Record events


@dataclass(frozen=True)
class Ballot:
    juror: JurorId
    vote: Vote
    reasoning: str


@dataclass(frozen=True)
class VoteRound:
    turn: int
    ballots: tuple[Ballot, ...]

    @property
    def votes(self) -> dict[JurorId, Vote]:
        return {b.juror: b.vote for b in self.ballots}

    @property
    def unanimous(self) -> Vote | None:
        votes = {b.vote for b in self.ballots}
        if len(self.ballots) == N_JURORS and len(votes) == 1:
            return votes.pop()
        return None


@dataclass(frozen=True)
class VoteChangeEvent:
    turn: int
    juror: JurorId
    from_vote: Vote
    to_vote: Vote


@dataclass(frozen=True)
class Utterance:
    turn: int
    speaker: JurorId
    text: str
    # raw selector output (model-driven selection audit trail)
    selection: str | None = None


UNANIMOUS = "unanimous"
EARLY_STOP = "early_stop"
BUDGET_EXHAUSTED = "budget_exhausted"
STRUCTURED_OUTPUT_FAILURE = "structured_output_failure"
TRANSPORT_FAILURE = "transport_failure"
REPLAY_MISMATCH = "replay_mismatch"
COMPLETED_REASONS = frozenset({UNANIMOUS, EARLY_STOP, BUDGET_EXHAUSTED})
ABORT_REASONS = frozenset({STRUCTURED_OUTPUT_FAILURE, TRANSPORT_FAILURE, REPLAY_MISMATCH})


@dataclass(frozen=True)
class Termination:
    turn: int
    verdict: Verdict | None  # None only for aborted runs
    reason: str
    detail: str = ""


Event = Union[Utterance, VoteRound, Termination]


@dataclass(frozen=True)
class DeliberationRecord:
    config: RunConfig
    events: tuple[Event, ...]
    verdict: Verdict | None
    total_turns: int
    vote_changes: tuple[VoteChangeEvent, ...]
    # conditioned starting votes; None under NoInitialVote
    initial_votes: Mapping[JurorId, Vote] | None = None

    @property
    def utterances(self) -> list[Utterance]:
        return [e for e in self.events if isinstance(e, Utterance)]

    @property
    def vote_rounds(self) -> list[VoteRound]:
        return [e for e in self.events if isinstance(e, VoteRound)]

    @property
    def termination(self) -> Termination | None:
        last = self.events[-1] if self.events else None
        return last if isinstance(last, Termination) else None

    @property
    def aborted(self) -> bool:
        term = self.termination
        return term is not None and term.reason in ABORT_REASONS


def derive_vote_changes(
    initial_votes: Mapping[JurorId, Vote] | None, rounds: Iterable[VoteRound]
) -> list[VoteChangeEvent]:
    """Diff consecutive vote states, ordered by turn then juror id.

    Without initial votes the first round is the baseline and yields no
    changes.
    """
    prev = dict(initial_votes) if initial_votes is not None else None
    changes: list[VoteChangeEvent] = []
    for rnd in rounds:
        current = rnd.votes
        if prev is not None:
            for juror in sorted(current):
                before = prev.get(juror)
                if before is not None and before is not current[juror]:
                    changes.append(VoteChangeEvent(rnd.turn, juror, before, current[juror]))
        prev = current
    return changes


def validate_record(record: DeliberationRecord) -> list[str]:
    """Return every invariant violation found in ``record`` (empty if valid)."""
    problems: list[str] = []
    cfg = record.config
    events = record.events

    terminations = [i for i, e in enumerate(events) if isinstance(e, Termination)]
    if len(terminations) != 1:
        problems.append(f"expected exactly one termination event, found {len(terminations)}")
    elif terminations[0] != len(events) - 1:
        problems.append("event after termination")

    term = record.termination
    if term is not None:
        if term.turn != record.total_turns:
            problems.append(f"termination turn {term.turn} != total_turns {record.total_turns}")
        if term.verdict != record.verdict:
            problems.append("termination verdict differs from record verdict")
        if term.reason in ABORT_REASONS:
            if term.verdict is not None:
                problems.append("aborted run must not carry a verdict")
        elif term.reason not in COMPLETED_REASONS:
            problems.append(f"unknown termination reason {term.reason!r}")
    if record.verdict is None and not record.aborted:
        problems.append("missing verdict on a completed run")
    if record.total_turns > cfg.max_turns:
        problems.append(f"total_turns {record.total_turns} exceeds max_turns {cfg.max_turns}")

    turns = [e.turn for e in events if isinstance(e, Utterance)]
    if turns != list(range(1, len(turns) + 1)):
        problems.append("utterance turns are not 1, 2, 3, ... in order")
    elif len(turns) != record.total_turns:
        problems.append(f"{len(turns)} utterances for total_turns {record.total_turns}")

    last_turn = 0
    for e in events:
        if e.turn < last_turn:
            problems.append(f"event at turn {e.turn} out of order")
            break
        last_turn = e.turn

    rounds = record.vote_rounds
    for rnd in rounds:
        if rnd.turn % cfg.vote_interval != 0:
            problems.append(f"vote round at turn {rnd.turn} is not a multiple of {cfg.vote_interval}")
        seen = [b.juror for b in rnd.ballots]
        for juror in ALL_JURORS:
            if seen.count(juror) == 0:
                problems.append(f"missing ballot for {juror} at turn {rnd.turn}")
            elif seen.count(juror) > 1:
                problems.append(f"duplicate ballot for {juror} at turn {rnd.turn}")
        for b in rnd.ballots:
            if not b.reasoning.strip():
                problems.append(f"empty reasoning from {b.juror} at turn {rnd.turn}")
    expected = list(range(cfg.vote_interval, record.total_turns + 1, cfg.vote_interval))
    got = [r.turn for r in rounds]
    if record.aborted and expected and got == expected[:-1] and expected[-1] == record.total_turns:
        # the aborted round itself was never completed
        pass
    elif got != expected:
        problems.append(f"vote rounds at turns {got}, expected {expected}")

    # round immediately precedes termination only at interval multiples
    for i, e in enumerate(events):
        if isinstance(e, VoteRound):
            prev = events[i - 1] if i > 0 else None
            if not (isinstance(prev, Utterance) and prev.turn == e.turn):
                problems.append(f"vote round at turn {e.turn} does not follow that turn's utterance")

    if record.verdict in (Verdict.GUILTY, Verdict.NOT_GUILTY):
        final = rounds[-1] if rounds else None
        if final is None or final.unanimous is None or final.unanimous.value != record.verdict.value:
            problems.append(f"verdict {record.verdict} without a matching unanimous final round")

    if cfg.condition is Condition.NO_INITIAL_VOTE:
        if record.initial_votes is not None:
            problems.append("initial votes recorded under no_initial_vote")
    elif record.initial_votes is None or sorted(record.initial_votes) != list(ALL_JURORS):
        problems.append("conditioned run needs initial votes for all twelve jurors")

    try:
        derived = derive_vote_changes(record.initial_votes, rounds)
    except Exception as exc:  # malformed rounds already reported above
        derived = None
        problems.append(f"cannot derive vote changes: {exc}")
    if derived is not None and tuple(derived) != tuple(record.vote_changes):
        problems.append("stored vote_changes do not match the vote rounds")
    for ch in record.vote_changes:
        if ch.from_vote is ch.to_vote:
            problems.append(f"no-op vote change for {ch.juror} at turn {ch.turn}")
    return problems


# ---------------------------------------------------------------------------
# Serialization


def _votes_to_dict(votes: Mapping[JurorId, Vote] | None) -> dict[str, str] | None:
    if votes is None:
        return None
    return {str(j): v.value for j, v in sorted(votes.items())}


def _votes_from_dict(raw: Mapping[str, str] | None) -> dict[JurorId, Vote] | None:
    if raw is None:
        return None
    return {JurorId(k): Vote.parse(v) for k, v in raw.items()}


def profile_to_dict(profile: ScriptedProfile) -> dict[str, Any]:
    return {
        "name": profile.name,
        "noise_scale": profile.noise_scale,
        "jurors": [
            {
                "openness": p.openness,
                "anchor_strength": p.anchor_strength,
                "persuasiveness": p.persuasiveness,
                "conviction_init": p.conviction_init,
                "prior_not_guilty": p.prior_not_guilty,
            }
            for p in profile.jurors
        ],
    }


def profile_from_dict(raw: Mapping[str, Any]) -> ScriptedProfile:
    return ScriptedProfile(
        jurors=tuple(JurorParams(**{k: float(v) for k, v in p.items()}) for p in raw["jurors"]),
        noise_scale=float(raw.get("noise_scale", 0.0)),
        name=str(raw.get("name", "custom")),
    )


def backend_to_dict(spec: BackendSpec) -> dict[str, Any]:
    out: dict[str, Any] = {"kind": spec.kind.value}
    if spec.kind is BackendKind.LLM_CHAT:
        out["model_name"] = spec.model_name
        out["endpoint"] = spec.endpoint
    elif spec.kind is BackendKind.SCRIPTED:
        out["scripted_params"] = profile_to_dict(spec.scripted_params)
    else:
        out["source_record"] = record_to_dict(spec.source_record)
    return out


def backend_from_dict(raw: Mapping[str, Any]) -> BackendSpec:
    kind = BackendKind.parse(raw["kind"])
    if kind is BackendKind.LLM_CHAT:
        return BackendSpec(kind, model_name=raw.get("model_name"), endpoint=raw.get("endpoint"))
    if kind is BackendKind.SCRIPTED:
        return BackendSpec(kind, scripted_params=profile_from_dict(raw["scripted_params"]))
    return BackendSpec(kind, source_record=record_from_dict(raw["source_record"]))


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    return {
        "backend": backend_to_dict(cfg.backend_spec),
        "condition": cfg.condition.value,
        "seed": cfg.seed,
        "temperature": cfg.temperature,
        "max_turns": cfg.max_turns,
        "vote_interval": cfg.vote_interval,
        "patience_rounds": cfg.patience_rounds,
        "selector_policy": cfg.selector_policy.value,
        "canonical_flip_order": [str(j) for j in cfg.canonical_flip_order],
        "rho_undefined_policy": cfg.rho_undefined_policy.value,
    }


def config_from_dict(raw: Mapping[str, Any]) -> RunConfig:
    return RunConfig(
        backend_spec=backend_from_dict(raw["backend"]),
        condition=Condition.parse(raw["condition"]),
        seed=int(raw["seed"]),
        temperature=float(raw["temperature"]),
        max_turns=int(raw["max_turns"]),
        vote_interval=int(raw["vote_interval"]),
        patience_rounds=int(raw["patience_rounds"]),
        selector_policy=SelectorPolicy.parse(raw["selector_policy"]),
        canonical_flip_order=tuple(JurorId(j) for j in raw["canonical_flip_order"]),
        rho_undefined_policy=RhoPolicy.parse(raw["rho_undefined_policy"]),
    )


def event_to_dict(event: Event) -> dict[str, Any]:
    if isinstance(event, Utterance):
        out: dict[str, Any] = {
            "type": "utterance",
            "turn": event.turn,
            "speaker": str(event.speaker),
            "text": event.text,
        }
        if event.selection is not None:
            out["selection"] = event.selection
        return out
    if isinstance(event, VoteRound):
        return {
            "type": "vote_round",
            "turn": event.turn,
            "ballots": [
                {"juror": str(b.juror), "vote": b.vote.value, "reasoning": b.reasoning}
                for b in event.ballots
            ],
        }
    if isinstance(event, Termination):
        return {
            "type": "termination",
            "turn": event.turn,
            "verdict": event.verdict.value if event.verdict is not None else None,
            "reason": event.reason,
            "detail": event.detail,
        }
    raise TypeError(f"not an event: {event!r}")


def event_from_dict(raw: Mapping[str, Any]) -> Event:
    kind = raw["type"]
    if kind == "utterance":
        return Utterance(int(raw["turn"]), JurorId(raw["speaker"]), str(raw["text"]), raw.get("selection"))
    if kind == "vote_round":
        return VoteRound(
            int(raw["turn"]),
            tuple(
                Ballot(JurorId(b["juror"]), Vote.parse(b["vote"]), str(b["reasoning"]))
                for b in raw["ballots"]
            ),
        )
    if kind == "termination":
        verdict = raw.get("verdict")
        return Termination(
            int(raw["turn"]),
            Verdict.parse(verdict) if verdict is not None else None,
            str(raw["reason"]),
            str(raw.get("detail", "")),
        )
    raise ValueError(f"unknown event type {kind!r}")


def change_to_dict(ch: VoteChangeEvent) -> dict[str, Any]:
    return {"turn": ch.turn, "juror": str(ch.juror), "from": ch.from_vote.value, "to": ch.to_vote.value}


def change_from_dict(raw: Mapping[str, Any]) -> VoteChangeEvent:
    return VoteChangeEvent(int(raw["turn"]), JurorId(raw["juror"]), Vote.parse(raw["from"]), Vote.parse(raw["to"]))


def record_header_to_dict(record: DeliberationRecord) -> dict[str, Any]:
    """Everything in a record except the event list."""
    return {
        "config": config_to_dict(record.config),
        "initial_votes": _votes_to_dict(record.initial_votes),
        "verdict": record.verdict.value if record.verdict is not None else None,
        "total_turns": record.total_turns,
        "vote_changes": [change_to_dict(c) for c in record.vote_changes],
    }


def record_to_dict(record: DeliberationRecord) -> dict[str, Any]:
    out = record_header_to_dict(record)
    out["events"] = [event_to_dict(e) for e in record.events]
    return out


def record_from_parts(header: Mapping[str, Any], events: Sequence[Event]) -> DeliberationRecord:
    verdict = header.get("verdict")
    return DeliberationRecord(
        config=config_from_dict(header["config"]),
        events=tuple(events),
        verdict=Verdict.parse(verdict) if verdict is not None else None,
        total_turns=int(header["total_turns"]),
        vote_changes=tuple(change_from_dict(c) for c in header["vote_changes"]),
        initial_votes=_votes_from_dict(header.get("initial_votes")),
    )


def record_from_dict(raw: Mapping[str, Any]) -> DeliberationRecord:
    return record_from_parts(raw, [event_from_dict(e) for e in raw["events"]])


def encode_record(record: DeliberationRecord) -> str:
    return json.dumps(record_to_dict(record), ensure_ascii=False)


def decode_record(text: str) -> DeliberationRecord:
    return record_from_dict(json.loads(text))
