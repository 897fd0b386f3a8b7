"""Acceptance criteria, one test per criterion.

The conftest terminal summary prints one PASS/FAIL line per test here.
"""

from __future__ import annotations

import difflib
import itertools
import json
import random
import time
from fractions import Fraction
from pathlib import Path

import httpx
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from builders import G, NG, baseline_votes, config, scripted_spec, uniform_profile
from jurybench.agents import ChatClient, LlmChatBackend, load_preset
from jurybench.domain import (
    ALL_JURORS,
    DEFAULT_CANONICAL_FLIP_ORDER,
    ABORT_REASONS,
    COMPLETED_REASONS,
    Ballot,
    BackendKind,
    BackendSpec,
    Condition,
    DeliberationRecord,
    JurorId,
    JurorParams,
    RhoPolicy,
    RunConfig,
    ScriptedProfile,
    SelectorPolicy,
    Termination,
    Utterance,
    Verdict,
    Vote,
    VoteChangeEvent,
    VoteRound,
    condition_personas,
    decode_record,
    derive_vote_changes,
    encode_record,
    validate_record,
)
from jurybench.engine import minority_jurors, run_deliberation
from jurybench.harness import parse_matrix, run_matrix
from jurybench.metrics import RunMetrics, aggregate, first_flip_order, spearman_rho
from jurybench.prompts import assemble_system_prompt
from jurybench.tables import format_table

pytestmark = pytest.mark.acceptance

CANON = DEFAULT_CANONICAL_FLIP_ORDER


# ---------------------------------------------------------------------------
# 1. Aggregation reproduces the reference per-cell table

REFERENCE_TABLE = [
    ("GPT-4o", "baseline", "3", "3", "0", "0", "44.0", "1.0", "1.00"),
    ("GPT-4o", "no_initial_vote", "3", "3", "0", "0", "64.0", "0.7", "1.00"),
    ("GPT-4o", "open_minded", "3", "3", "0", "0", "44.0", "1.0", "1.00"),
    ("Llama-4-Scout", "baseline", "3", "3", "0", "0", "60.0", "2.0", "0.98"),
    ("Llama-4-Scout", "no_initial_vote", "3", "2", "1", "0", "61.3", "3.3", "0.62"),
    ("Llama-4-Scout", "open_minded", "3", "3", "0", "0", "72.0", "6.0", "0.34"),
]


def _synthetic_run(model, condition, seed, verdict, turns, order_idx=(), extra_flips=0):
    """RunMetrics whose vote changes realise a given first-flip order.

    ``order_idx`` indexes into the canonical order; ``extra_flips`` adds
    Juror_8 oscillations (NOT_GUILTY -> GUILTY -> ...), which count as
    changes but never enter the first-flip order.
    """
    changes = [VoteChangeEvent(k + 1, CANON[i], G, NG) for k, i in enumerate(order_idx)]
    vote = NG
    for k in range(extra_flips):
        changes.append(VoteChangeEvent(len(order_idx) + k + 1, JurorId(8), vote, vote.opposite))
        vote = vote.opposite
    order = first_flip_order(changes)
    return RunMetrics(
        model=model,
        condition=condition,
        seed=seed,
        verdict=verdict,
        total_turns=turns,
        vote_changes=tuple(changes),
        num_changes=len(changes),
        cascade_velocity=len(changes) / turns,
        first_flip_order=tuple(order),
        spearman_rho=spearman_rho(order, CANON, RhoPolicy.REPORT_ONE),
    )


def _reference_runs():
    H, N = Verdict.HUNG_JURY, Verdict.NOT_GUILTY
    gpt, llama = "GPT-4o", "Llama-4-Scout"
    return [
        _synthetic_run(gpt, "baseline", 1, H, 36, (0,)),
        _synthetic_run(gpt, "baseline", 2, H, 48, (1,)),
        _synthetic_run(gpt, "baseline", 3, H, 48, (0,)),
        _synthetic_run(gpt, "no_initial_vote", 1, H, 60, (0,)),
        _synthetic_run(gpt, "no_initial_vote", 2, H, 60, (2,)),
        _synthetic_run(gpt, "no_initial_vote", 3, H, 72, ()),
        _synthetic_run(gpt, "open_minded", 1, H, 36, (0,)),
        _synthetic_run(gpt, "open_minded", 2, H, 48, (1,)),
        _synthetic_run(gpt, "open_minded", 3, H, 48, (0,)),
        _synthetic_run(llama, "baseline", 1, H, 36, ()),
        _synthetic_run(llama, "baseline", 2, H, 36, ()),
        _synthetic_run(llama, "baseline", 3, H, 108, (0, 1, 2, 3, 5, 4)),
        _synthetic_run(llama, "no_initial_vote", 1, H, 48, (0, 1)),
        _synthetic_run(llama, "no_initial_vote", 2, N, 64, (0, 5, 4, 3, 2, 1)),
        _synthetic_run(llama, "no_initial_vote", 3, H, 72, (3, 4)),
        _synthetic_run(llama, "open_minded", 1, H, 72, (0,), extra_flips=5),
        _synthetic_run(llama, "open_minded", 2, H, 72, (0, 2, 1), extra_flips=3),
        _synthetic_run(llama, "open_minded", 3, H, 72, (2, 3, 5, 4, 1, 0)),
    ]


def test_ac1_reference_table_reproduction():
    start = time.perf_counter()
    runs = _reference_runs()
    rows = aggregate(runs)
    table = format_table(rows)
    elapsed = time.perf_counter() - start

    parsed = [tuple(line.split()) for line in table.splitlines()[2:]]
    print(table)
    assert parsed == REFERENCE_TABLE
    assert elapsed < 1.0
    # the scalar columns are also exact arithmetic means
    assert rows[0].avg_turns == 44.0 and rows[0].avg_flips == 1.0
    assert (rows[4].hung, rows[4].not_guilty, rows[4].guilty) == (2, 1, 0)
    assert rows[4].avg_turns == 184 / 3 and rows[4].avg_flips == 10 / 3
    print(f"AC1 reference table reproduced in {elapsed * 1000:.1f} ms (rho under report_one)")


# ---------------------------------------------------------------------------
# 2. Early stop with closed-minded jurors


def test_ac2_early_stop_law(personas, case_file):
    conditions = list(Condition)
    start = time.perf_counter()
    outcomes = set()
    for seed in range(200):
        cfg = config(conditions[seed % 3], seed, BackendSpec(BackendKind.SCRIPTED, scripted_params=uniform_profile(0.0)))
        rec = run_deliberation(cfg, personas, case_file)
        outcomes.add((rec.total_turns, rec.verdict, len(rec.vote_changes), rec.termination.reason))
    elapsed = time.perf_counter() - start
    assert outcomes == {(36, Verdict.HUNG_JURY, 0, "early_stop")}
    assert elapsed < 10.0
    print(f"AC2 200 closed-minded runs all HUNG_JURY at turn 36 in {elapsed:.2f} s")


# ---------------------------------------------------------------------------
# 3. Convergence with the flexible preset


def test_ac3_flexible_convergence(personas, case_file):
    start = time.perf_counter()
    converged = 0
    spec = scripted_spec("flexible")
    for seed in range(100):
        rec = run_deliberation(config(Condition.BASELINE, seed, spec), personas, case_file)
        if rec.verdict is Verdict.NOT_GUILTY and rec.total_turns < 150:
            assert rec.vote_rounds[-1].unanimous is Vote.NOT_GUILTY
            converged += 1
    elapsed = time.perf_counter() - start
    assert converged >= 50
    assert elapsed < 60.0
    print(f"AC3 {converged}/100 flexible runs reached unanimous NOT_GUILTY in {elapsed:.2f} s")


# ---------------------------------------------------------------------------
# 4. Spearman against an exact brute-force oracle


def _oracle_rho(observed, canonical):
    """Pearson correlation of rank vectors in exact rational arithmetic."""
    common = [j for j in observed if j in canonical]
    canon = [j for j in canonical if j in common]
    xs = [Fraction(common.index(j) + 1) for j in common]
    ys = [Fraction(canon.index(j) + 1) for j in common]
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    vx = sum((x - mx) ** 2 for x in xs)
    vy = sum((y - my) ** 2 for y in ys)
    # rank vectors of equal length have equal variance, so no square root is needed
    assert vx == vy
    return cov / vx


def test_ac4_spearman_oracle():
    cases = 0
    for n in range(2, 6):
        for perm in itertools.permutations(CANON[:n]):
            assert spearman_rho(list(perm), CANON) == float(_oracle_rho(list(perm), list(CANON)))
            cases += 1
    a, b, c = CANON[:3]
    assert spearman_rho([a, b, c], [a, c, b]) == 0.5 == float(_oracle_rho([a, b, c], [a, c, b]))
    cases += 1
    assert cases == 153
    print(f"AC4 spearman_rho matched the exact oracle on {cases} cases")


# ---------------------------------------------------------------------------
# 5. Dissent-priority speaking guarantee


def _random_profile(rng: random.Random) -> ScriptedProfile:
    jurors = tuple(
        JurorParams(
            openness=rng.random(),
            anchor_strength=rng.uniform(0, 5),
            persuasiveness=rng.uniform(0, 3),
            conviction_init=rng.random(),
            prior_not_guilty=rng.random() * 0.5,
        )
        for _ in ALL_JURORS
    )
    return ScriptedProfile(jurors, noise_scale=rng.uniform(0, 2), name="random")


def test_ac5_dissent_priority_guarantee(personas, case_file):
    rng = random.Random(2024)
    windows = minority_windows = 0
    for i in range(100):
        choice = rng.choice(["flexible", "moderate", "random"])
        profile = _random_profile(rng) if choice == "random" else load_preset(choice)
        interval = rng.randint(6, 12)
        cfg = RunConfig(
            BackendSpec(BackendKind.SCRIPTED, scripted_params=profile),
            rng.choice(list(Condition)),
            rng.randrange(2**32),
            vote_interval=interval,
            max_turns=interval * rng.randint(3, 12),
            patience_rounds=rng.randint(1, 4),
        )
        rec = run_deliberation(cfg, personas, case_file)
        assert not validate_record(rec)
        votes = dict(rec.initial_votes or {})
        speakers_by_window: dict[int, set] = {}
        for u in rec.utterances:
            speakers_by_window.setdefault((u.turn - 1) // interval, set()).add(u.speaker)
        for rnd in rec.vote_rounds:
            w = rnd.turn // interval - 1
            minority = minority_jurors(votes)
            missing = minority - speakers_by_window.get(w, set())
            assert not missing, f"run {i}: window {w} minority {sorted(minority)} never spoke: {sorted(missing)}"
            windows += 1
            minority_windows += bool(minority)
            votes = rnd.votes
    assert minority_windows > 0
    print(f"AC5 {windows} completed windows checked ({minority_windows} with a minority), guarantee held")


# ---------------------------------------------------------------------------
# 6. Prompt differences between conditions

EXPECTED_RULE_TEXT = (
    "Weigh ALL evidence fairly. Do not cling to your first instinct; "
    "if a counter-argument is sound, update your position."
)


def _line_diff(a: str, b: str) -> tuple[list[str], list[str]]:
    diff = list(difflib.ndiff(a.splitlines(), b.splitlines()))
    removed = [d[2:] for d in diff if d.startswith("- ")]
    added = [d[2:] for d in diff if d.startswith("+ ")]
    return removed, added


def test_ac6_prompt_condition_diffs(personas, case_file):
    checks = 0
    base_p = {p.id: p for p in condition_personas(personas, Condition.BASELINE)}
    niv_p = {p.id: p for p in condition_personas(personas, Condition.NO_INITIAL_VOTE)}
    for juror in ALL_JURORS:
        base = assemble_system_prompt(base_p[juror], case_file, Condition.BASELINE).system_prompt
        om = assemble_system_prompt(base_p[juror], case_file, Condition.OPEN_MINDED).system_prompt
        niv = assemble_system_prompt(niv_p[juror], case_file, Condition.NO_INITIAL_VOTE).system_prompt

        assert _line_diff(base, om) == ([], [EXPECTED_RULE_TEXT])
        checks += 1
        vote = "NOT_GUILTY" if juror == 8 else "GUILTY"
        assert _line_diff(base, niv) == ([f"Initial vote: {vote}."], [])
        checks += 1
    assert checks == 24
    print(f"AC6 {checks} prompt diffs each differ by exactly the expected line")


# ---------------------------------------------------------------------------
# 7. Determinism and serialization round-trip

MATRIX = {
    "backends": ["scripted:rigid", "scripted:moderate", "scripted:flexible"],
    "conditions": ["baseline", "no_initial_vote", "open_minded"],
    "replications": 3,
    "base_seed": 11,
}


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "progress.log"
    }


_texts = st.text(st.characters(blacklist_categories=("Cs",)), max_size=40)


@st.composite
def _records(draw):
    interval = draw(st.integers(1, 6))
    n_rounds = draw(st.integers(0, 4))
    extra = draw(st.integers(0, interval - 1))
    total = max(1, interval * n_rounds + extra)
    cond = draw(st.sampled_from(list(Condition)))
    kind = draw(st.sampled_from(["scripted", "llm"]))
    if kind == "scripted":
        params = JurorParams(
            draw(st.floats(0, 1)), draw(st.floats(0, 10)), draw(st.floats(0, 10)), draw(st.floats(0, 1)), draw(st.floats(0, 1))
        )
        spec = BackendSpec(BackendKind.SCRIPTED, scripted_params=ScriptedProfile((params,) * 12, draw(st.floats(0, 5)), draw(_texts)))
    else:
        spec = BackendSpec(BackendKind.LLM_CHAT, model_name=draw(_texts.filter(bool)), endpoint="http://localhost:1/v1")
    cfg = RunConfig(
        spec,
        cond,
        draw(st.integers(0, 2**64 - 1)),
        temperature=draw(st.floats(0, 2)),
        max_turns=max(total, interval) + draw(st.integers(0, 5)),
        vote_interval=interval,
        selector_policy=draw(st.sampled_from(list(SelectorPolicy))),
        rho_undefined_policy=draw(st.sampled_from(list(RhoPolicy))),
    )
    initial = baseline_votes() if cond is not Condition.NO_INITIAL_VOTE else None
    events, rounds = [], []
    for turn in range(1, total + 1):
        events.append(Utterance(turn, JurorId(draw(st.integers(1, 12))), draw(_texts), draw(st.none() | _texts)))
        if turn % interval == 0:
            votes = draw(st.lists(st.sampled_from([G, NG]), min_size=12, max_size=12))
            rnd = VoteRound(turn, tuple(Ballot(j, v, draw(_texts)) for j, v in zip(ALL_JURORS, votes)))
            rounds.append(rnd)
            events.append(rnd)
    reason = draw(st.sampled_from(sorted(COMPLETED_REASONS | ABORT_REASONS)))
    verdict = None if reason in ABORT_REASONS else draw(st.sampled_from(list(Verdict)))
    events.append(Termination(total, verdict, reason, draw(_texts)))
    return DeliberationRecord(cfg, tuple(events), verdict, total, tuple(derive_vote_changes(initial, rounds)), initial)


_roundtrip_count = 0


@settings(max_examples=1000, deadline=None, derandomize=True, suppress_health_check=list(HealthCheck))
@given(_records())
def _check_roundtrip(record):
    global _roundtrip_count
    assert decode_record(encode_record(record)) == record
    _roundtrip_count += 1


def test_ac7_determinism_and_roundtrip(tmp_path, personas, case_file):
    first = run_matrix(parse_matrix(MATRIX, tmp_path / "a"))
    second = run_matrix(parse_matrix(MATRIX, tmp_path / "b"), workers=3)
    a, b = _tree_bytes(tmp_path / "a"), _tree_bytes(tmp_path / "b")
    streams = [k for k in a if k.endswith("events.jsonl")]
    assert len(streams) == 27
    assert a == b
    assert first.table == second.table

    # real engine records, replay records nesting a source, and fuzzed records
    corpus = []
    for seed in range(20):
        spec = scripted_spec(["rigid", "moderate", "flexible"][seed % 3])
        rec = run_deliberation(config(list(Condition)[seed % 3], seed, spec), personas, case_file)
        corpus.append(rec)
        replay_cfg = config(rec.config.condition, seed, BackendSpec(BackendKind.REPLAY, source_record=rec))
        corpus.append(run_deliberation(replay_cfg, personas, case_file))
    for rec in corpus:
        assert decode_record(encode_record(rec)) == rec
        json.loads(encode_record(rec))
    global _roundtrip_count
    _roundtrip_count = 0
    _check_roundtrip()
    total = _roundtrip_count + len(corpus)
    assert _roundtrip_count >= 1000
    print(f"AC7 27 event streams byte-identical across reruns; {total} records round-tripped")


# ---------------------------------------------------------------------------
# 8. Malformed structured votes against a mock chat endpoint

_MALFORMED = (
    "I think he is guilty.",
    '{"vote": "MAYBE", "reasoning": "Unsure."}',
    '{"vote": "GUILTY"}',
    '{"vote": "NOT_GUILTY", "reasoning": "The knife',
    '["GUILTY", "because"]',
)


class _MockJury:
    """Chat endpoint that corrupts vote replies with a fixed probability."""

    def __init__(self, seed: int, p_malformed: float = 0.3):
        self.rng = random.Random(seed)
        self.p = p_malformed
        self.ballot_log: list[tuple[str, bool]] = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        system = body["messages"][0]["content"]
        juror = system.split("You are ", 1)[1].split(" ", 1)[0]
        if "response_format" in body:
            if self.rng.random() < self.p:
                content = self.rng.choice(_MALFORMED)
                self.ballot_log.append((juror, False))
            else:
                vote = "NOT_GUILTY" if juror == "Juror_8" else "GUILTY"
                content = json.dumps({"vote": vote, "reasoning": "The evidence points this way."})
                self.ballot_log.append((juror, True))
        else:
            content = f"{juror} speaks about the switchblade."
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})


def _expected_abort(log: list[tuple[str, bool]], attempts: int = 3) -> bool:
    """Replay the attempt log: abort iff some ballot failed ``attempts`` times running."""
    streak = 0
    for _, ok in log:
        streak = 0 if ok else streak + 1
        if streak == attempts:
            return True
    return False


def test_ac8_structured_vote_robustness(personas, case_file):
    spec = BackendSpec(BackendKind.LLM_CHAT, model_name="mock-model", endpoint="http://mock.invalid/v1")
    completed = aborted = 0
    for seed in range(40):
        cfg = RunConfig(spec, Condition.BASELINE, seed, max_turns=24, vote_interval=12)
        mock = _MockJury(seed)
        client = ChatClient("http://mock.invalid/v1", "mock-model", "test-key", transport=httpx.MockTransport(mock), backoff=0)
        backend = LlmChatBackend(client, cfg, condition_personas(personas, cfg.condition), case_file)
        rec = run_deliberation(cfg, personas, case_file, backend=backend)
        client.close()
        assert not validate_record(rec)
        if _expected_abort(mock.ballot_log):
            assert rec.aborted
            assert rec.verdict is None and rec.verdict is not Verdict.HUNG_JURY
            assert rec.termination.reason == "structured_output_failure"
            assert rec.termination.detail.startswith("structured-output failure")
            aborted += 1
        else:
            assert not rec.aborted
            assert rec.verdict is Verdict.HUNG_JURY and rec.termination.reason in COMPLETED_REASONS
            assert len(rec.vote_rounds) == 2
            completed += 1
    assert completed > 0 and aborted > 0
    print(f"AC8 {completed} runs completed after re-asks, {aborted} aborted as structured-output failures")
