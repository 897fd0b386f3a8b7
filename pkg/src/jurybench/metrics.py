"""Per-run metrics, transcript detectors and per-cell aggregation."""

from __future__ import annotations

import logging
import math
import re
import statistics
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import yaml

from .domain import (
    ALL_JURORS,
    CaseFile,
    DeliberationRecord,
    JurorId,
    Persona,
    RhoPolicy,
    Utterance,
    Verdict,
    Vote,
    VoteChangeEvent,
    VoteRound,
    _data_text,
    change_from_dict,
    change_to_dict,
    derive_vote_changes,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Vote dynamics


def extract_vote_changes(record: DeliberationRecord) -> list[VoteChangeEvent]:
    return derive_vote_changes(record.initial_votes, record.vote_rounds)


def first_flip_order(changes: Iterable[VoteChangeEvent]) -> list[JurorId]:
    """Jurors in order of their first GUILTY -> NOT_GUILTY switch.

    A juror whose first recorded change is NOT_GUILTY -> GUILTY started out
    NOT_GUILTY and never counts. Same-turn flips are ordered by juror id.
    """
    seen: set[JurorId] = set()
    order = []
    for ch in sorted(changes, key=lambda c: (c.turn, c.juror)):
        if ch.juror in seen:
            continue
        seen.add(ch.juror)
        if ch.from_vote is Vote.GUILTY and ch.to_vote is Vote.NOT_GUILTY:
            order.append(ch.juror)
    return order


def restrict_rankings(
    observed: Sequence[JurorId], canonical: Sequence[JurorId]
) -> tuple[list[JurorId], list[JurorId], list[JurorId]]:
    """Restrict both orders to their common jurors.

    Returns (observed_common, canonical_common, excluded) where ``excluded``
    lists observed jurors absent from the canonical order.
    """
    if len(set(observed)) != len(observed):
        raise ValueError("observed order contains duplicates")
    canon_set = set(canonical)
    common = [j for j in observed if j in canon_set]
    excluded = [j for j in observed if j not in canon_set]
    common_set = set(common)
    return common, [j for j in canonical if j in common_set], excluded


def spearman_rho(
    observed: Sequence[JurorId],
    canonical: Sequence[JurorId],
    policy: RhoPolicy = RhoPolicy.SKIP,
) -> float | None:
    """Rank correlation between an observed flip order and the canonical one.

    Ranks are positions within the lists restricted to their common jurors.
    With fewer than two common jurors the result is None (``SKIP``) or 1.0
    (``REPORT_ONE``).
    """
    common, canon, excluded = restrict_rankings(observed, canonical)
    if excluded:
        logger.info("jurors missing from canonical order excluded from rho: %s", excluded)
    n = len(common)
    if n < 2:
        return None if RhoPolicy.parse(policy) is RhoPolicy.SKIP else 1.0
    canon_rank = {j: i for i, j in enumerate(canon, 1)}
    d2 = sum((i - canon_rank[j]) ** 2 for i, j in enumerate(common, 1))
    denom = n * (n * n - 1)
    # one correctly-rounded int division
    return (denom - 6 * d2) / denom


def average_ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman_from_scores(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson correlation of average ranks; handles ties. None if undefined."""
    if len(x) != len(y):
        raise ValueError("length mismatch")
    if len(x) < 2:
        return None
    rx, ry = average_ranks(x), average_ranks(y)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    sxy = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    if sxx == 0 or syy == 0:
        return None
    return sxy / math.sqrt(sxx * syy)


def cascade_velocity(num_changes: int, total_turns: int) -> float:
    if total_turns <= 0:
        raise ValueError(f"cascade velocity undefined for total_turns={total_turns}")
    return num_changes / total_turns


# ---------------------------------------------------------------------------
# Transcript detectors


def normalize_text(text: str) -> str:
    text = text.lower().replace("’", "'").replace("‘", "'")
    text = re.sub(r"[-_–—]", " ", text)
    return re.sub(r"\s+", " ", text).strip()


@dataclass(frozen=True)
class AliasTable:
    evidence: Mapping[int, tuple[str, ...]]
    key_arguments: Mapping[JurorId, tuple[tuple[str, ...], ...]] = field(default_factory=dict)


def load_aliases(path: str | Path | None = None) -> AliasTable:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8") if path else _data_text("aliases.yaml"))
    evidence = {int(k): tuple(normalize_text(a) for a in v) for k, v in raw.get("evidence", {}).items()}
    key_args = {
        JurorId(int(k)): tuple(tuple(normalize_text(a) for a in arg) for arg in v)
        for k, v in (raw.get("key_arguments") or {}).items()
    }
    return AliasTable(evidence, key_args)


@lru_cache(maxsize=1)
def default_aliases() -> AliasTable:
    return load_aliases()


def _matches(text: str, aliases: Iterable[str]) -> bool:
    return any(a and a in text for a in aliases)


def evidence_coverage(
    record: DeliberationRecord, case_file: CaseFile, aliases: AliasTable | None = None
) -> frozenset[int]:
    """Ids of evidence items cited anywhere in the transcript."""
    aliases = aliases or default_aliases()
    texts = [normalize_text(u.text) for u in record.utterances]
    cited = set()
    for item in case_file.evidence:
        keys = aliases.evidence.get(item.id) or (normalize_text(item.name),)
        if any(_matches(t, keys) for t in texts):
            cited.add(item.id)
    return frozenset(cited)


def key_argument_coverage(
    record: DeliberationRecord, personas: Sequence[Persona], aliases: AliasTable | None = None
) -> dict[JurorId, float]:
    """Per juror, the fraction of its key arguments raised in its own utterances."""
    aliases = aliases or default_aliases()
    own: dict[JurorId, list[str]] = {}
    for u in record.utterances:
        own.setdefault(u.speaker, []).append(normalize_text(u.text))
    out = {}
    for p in personas:
        table = aliases.key_arguments.get(p.id)
        if table is None or len(table) != len(p.key_arguments):
            table = tuple((normalize_text(a),) for a in p.key_arguments)
        texts = own.get(p.id, [])
        hit = sum(1 for keys in table if any(_matches(t, keys) for t in texts))
        out[p.id] = hit / len(table) if table else 0.0
    return out


_JUROR_MENTION = re.compile(r"(?i)\bjuror[ _#]?(\d{1,2})\b")


def cross_reference_count(record: DeliberationRecord) -> int:
    """Utterances naming at least one juror other than the speaker."""
    count = 0
    for u in record.utterances:
        mentioned = {int(m) for m in _JUROR_MENTION.findall(u.text)}
        if any(1 <= m <= 12 and m != int(u.speaker) for m in mentioned):
            count += 1
    return count


@dataclass(frozen=True)
class ClosurePattern:
    name: str
    regex: str
    # only flag while the jury is not actually unanimous
    false_consensus: bool = False

    def compiled(self) -> re.Pattern:
        return re.compile(self.regex, re.IGNORECASE)


_STAGE_VERBS = (
    "stands?|sits?|exits?|leaves?|walks?|pauses?|sighs?|slams?|pounds?|looks?|turns?|nods?|"
    "shakes?|laughs?|rises?|gets up|storms?|points?|leans?|smiles?|shrugs?|checks?|throws?|"
    "gestures?|whispers?|glances?|rubs?|fidgets?|stares?|paces?|claps?|mutters?|"
    "puts?|picks? up|hands?|opens?|closes?"
)

DEFAULT_CLOSURE_PATTERNS: tuple[ClosurePattern, ...] = (
    ClosurePattern("the_end", r"\bthe end\b"),
    ClosurePattern("stage_direction", rf"\((?:[a-z']+ )?(?:{_STAGE_VERBS})\b[^()]*\)"),
    ClosurePattern(
        "false_consensus",
        r"\b(?:we are|we're|the jury is|we have reached a) (?:now |all )?(?:unanimous|in (?:full )?agreement)\b"
        r"|\bunanimous(?:ly)? (?:verdict|decision|agreement)\b"
        r"|\bwe (?:all|now all) agree\b",
        false_consensus=True,
    ),
)


def detect_narrative_closure(
    record: DeliberationRecord, patterns: Sequence[ClosurePattern] = DEFAULT_CLOSURE_PATTERNS
) -> list[tuple[int, str]]:
    compiled = [(p, p.compiled()) for p in patterns]
    votes = dict(record.initial_votes or {})
    flags = []
    for event in record.events:
        if isinstance(event, VoteRound):
            votes = event.votes
        elif isinstance(event, Utterance):
            unanimous = len(votes) == len(ALL_JURORS) and len(set(votes.values())) == 1
            for pat, rx in compiled:
                if pat.false_consensus and unanimous:
                    continue
                if rx.search(event.text):
                    flags.append((event.turn, pat.name))
    return flags


# ---------------------------------------------------------------------------
# Per-run metrics


@dataclass(frozen=True)
class RunMetrics:
    model: str
    condition: str
    seed: int
    verdict: Verdict | None
    total_turns: int
    vote_changes: tuple[VoteChangeEvent, ...]
    num_changes: int
    cascade_velocity: float | None
    first_flip_order: tuple[JurorId, ...]
    spearman_rho: float | None
    evidence_coverage: frozenset[int] = frozenset()
    key_argument_coverage: Mapping[JurorId, float] = field(default_factory=dict)
    cross_reference_count: int = 0
    narrative_closure_flags: tuple[tuple[int, str], ...] = ()
    rho_excluded: tuple[JurorId, ...] = ()
    aborted: bool = False
    termination_reason: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "condition": self.condition,
            "seed": self.seed,
            "verdict": self.verdict.value if self.verdict is not None else None,
            "total_turns": self.total_turns,
            "vote_changes": [change_to_dict(c) for c in self.vote_changes],
            "num_changes": self.num_changes,
            "cascade_velocity": self.cascade_velocity,
            "first_flip_order": [str(j) for j in self.first_flip_order],
            "spearman_rho": self.spearman_rho,
            "evidence_coverage": sorted(self.evidence_coverage),
            "key_argument_coverage": {str(j): v for j, v in sorted(self.key_argument_coverage.items())},
            "cross_reference_count": self.cross_reference_count,
            "narrative_closure_flags": [[t, name] for t, name in self.narrative_closure_flags],
            "rho_excluded": [str(j) for j in self.rho_excluded],
            "aborted": self.aborted,
            "termination_reason": self.termination_reason,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> RunMetrics:
        verdict = raw.get("verdict")
        return cls(
            model=raw["model"],
            condition=raw["condition"],
            seed=int(raw["seed"]),
            verdict=Verdict.parse(verdict) if verdict is not None else None,
            total_turns=int(raw["total_turns"]),
            vote_changes=tuple(change_from_dict(c) for c in raw["vote_changes"]),
            num_changes=int(raw["num_changes"]),
            cascade_velocity=raw.get("cascade_velocity"),
            first_flip_order=tuple(JurorId(j) for j in raw["first_flip_order"]),
            spearman_rho=raw.get("spearman_rho"),
            evidence_coverage=frozenset(int(i) for i in raw.get("evidence_coverage", [])),
            key_argument_coverage={JurorId(k): float(v) for k, v in raw.get("key_argument_coverage", {}).items()},
            cross_reference_count=int(raw.get("cross_reference_count", 0)),
            narrative_closure_flags=tuple((int(t), str(n)) for t, n in raw.get("narrative_closure_flags", [])),
            rho_excluded=tuple(JurorId(j) for j in raw.get("rho_excluded", [])),
            aborted=bool(raw.get("aborted", False)),
            termination_reason=str(raw.get("termination_reason", "")),
        )


def compute_run_metrics(
    record: DeliberationRecord,
    personas: Sequence[Persona],
    case_file: CaseFile,
    aliases: AliasTable | None = None,
    closure_patterns: Sequence[ClosurePattern] = DEFAULT_CLOSURE_PATTERNS,
) -> RunMetrics:
    cfg = record.config
    changes = extract_vote_changes(record)
    order = first_flip_order(changes)
    _, _, excluded = restrict_rankings(order, cfg.canonical_flip_order)
    term = record.termination
    return RunMetrics(
        model=cfg.backend_spec.label,
        condition=cfg.condition.value,
        seed=cfg.seed,
        verdict=record.verdict,
        total_turns=record.total_turns,
        vote_changes=tuple(changes),
        num_changes=len(changes),
        cascade_velocity=cascade_velocity(len(changes), record.total_turns) if record.total_turns > 0 else None,
        first_flip_order=tuple(order),
        spearman_rho=spearman_rho(order, cfg.canonical_flip_order, cfg.rho_undefined_policy),
        evidence_coverage=evidence_coverage(record, case_file, aliases),
        key_argument_coverage=key_argument_coverage(record, personas, aliases),
        cross_reference_count=cross_reference_count(record),
        narrative_closure_flags=tuple(detect_narrative_closure(record, closure_patterns)),
        rho_excluded=tuple(excluded),
        aborted=record.aborted,
        termination_reason=term.reason if term is not None else "",
    )


# ---------------------------------------------------------------------------
# Aggregation


@dataclass(frozen=True)
class AggregateRow:
    model: str
    condition: str
    n: int
    hung: int
    not_guilty: int
    guilty: int
    avg_turns: float
    avg_flips: float
    rho: float | None
    sd_turns: float = 0.0
    sd_flips: float = 0.0
    rho_runs: int = 0


def _sd(values: Sequence[float]) -> float:
    return statistics.stdev(values) if len(values) > 1 else 0.0


def aggregate(runs: Iterable[RunMetrics]) -> list[AggregateRow]:
    """One row per (model, condition), in order of first appearance.

    Aborted runs are excluded with a warning. The rho column averages only
    runs where rho is defined (which depends on the per-run rho policy).
    """
    groups: dict[tuple[str, str], list[RunMetrics]] = {}
    for m in runs:
        if m.aborted:
            logger.warning("excluding aborted run %s/%s seed %d (%s)", m.model, m.condition, m.seed, m.termination_reason)
            continue
        groups.setdefault((m.model, m.condition), []).append(m)
    rows = []
    for (model, condition), ms in groups.items():
        turns = [m.total_turns for m in ms]
        flips = [m.num_changes for m in ms]
        rhos = [m.spearman_rho for m in ms if m.spearman_rho is not None]
        rows.append(
            AggregateRow(
                model=model,
                condition=condition,
                n=len(ms),
                hung=sum(m.verdict is Verdict.HUNG_JURY for m in ms),
                not_guilty=sum(m.verdict is Verdict.NOT_GUILTY for m in ms),
                guilty=sum(m.verdict is Verdict.GUILTY for m in ms),
                avg_turns=statistics.fmean(turns),
                avg_flips=statistics.fmean(flips),
                rho=statistics.fmean(rhos) if rhos else None,
                sd_turns=_sd(turns),
                sd_flips=_sd(flips),
                rho_runs=len(rhos),
            )
        )
    return rows
