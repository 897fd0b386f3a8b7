from __future__ import annotations

from dataclasses import replace

import pytest

from jurybench.domain import Condition, condition_personas
from jurybench.prompts import (
    CASE_HEADER,
    OPEN_MINDED_RULE,
    PROFILE_HEADER,
    RULES_HEADER,
    PromptAssemblyError,
    assemble_system_prompt,
    assemble_vote_prompt,
)


def _prompt(personas, case_file, condition, juror=8):
    persona = condition_personas(personas, condition)[juror - 1]
    return assemble_system_prompt(persona, case_file, condition)


def test_sections_in_fixed_order(personas, case_file):
    text = _prompt(personas, case_file, Condition.BASELINE).system_prompt
    positions = [text.index(h) for h in (PROFILE_HEADER, CASE_HEADER, RULES_HEADER)]
    assert positions == sorted(positions)
    assert text.endswith("Initial vote: NOT_GUILTY.")


def test_juror_3_baseline_votes_guilty(personas, case_file):
    bundle = _prompt(personas, case_file, Condition.BASELINE, juror=3)
    assert "Initial vote: GUILTY." in bundle.system_prompt
    assert bundle.initial_vote_line_present and not bundle.open_minded_rule_present


def test_no_initial_vote_has_no_vote_line(personas, case_file):
    bundle = _prompt(personas, case_file, Condition.NO_INITIAL_VOTE)
    assert "Initial vote" not in bundle.system_prompt
    assert not bundle.initial_vote_line_present


def test_open_minded_adds_rule_sentence(personas, case_file):
    bundle = _prompt(personas, case_file, Condition.OPEN_MINDED, juror=3)
    assert "if a counter-argument is sound, update your position." in bundle.system_prompt
    assert bundle.system_prompt.count(OPEN_MINDED_RULE) == 1
    assert bundle.open_minded_rule_present and bundle.initial_vote_line_present


def test_prompt_includes_all_evidence(personas, case_file):
    text = _prompt(personas, case_file, Condition.BASELINE).system_prompt
    for item in case_file.evidence:
        assert f"Evidence #{item.id}: {item.name}" in text


def test_missing_persona_field_is_named(personas, case_file):
    broken = replace(personas[2], speaking_style="")
    with pytest.raises(PromptAssemblyError, match="speaking_style"):
        assemble_system_prompt(broken, case_file, Condition.BASELINE)


def test_missing_initial_vote_is_named(personas, case_file):
    unconditioned = condition_personas(personas, Condition.NO_INITIAL_VOTE)[0]
    with pytest.raises(PromptAssemblyError, match="initial_vote"):
        assemble_system_prompt(unconditioned, case_file, Condition.BASELINE)


def test_vote_prompt_requests_one_sentence_json():
    text = assemble_vote_prompt()
    assert '"vote"' in text and '"reasoning"' in text
    assert "one sentence" in text
    assert "GUILTY" in text and "NOT_GUILTY" in text


def test_prompts_are_deterministic(personas, case_file):
    a = _prompt(personas, case_file, Condition.OPEN_MINDED, juror=5)
    b = _prompt(personas, case_file, Condition.OPEN_MINDED, juror=5)
    assert a == b
