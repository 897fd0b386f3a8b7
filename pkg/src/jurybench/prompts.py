"""System-prompt and vote-prompt assembly for each experimental condition."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import yaml

from .domain import CaseFile, Condition, Persona, _data_text

PROFILE_HEADER = "## CHARACTER PROFILE"
CASE_HEADER = "## CASE FILE"
RULES_HEADER = "## DELIBERATION RULES"


class PromptAssemblyError(ValueError):
    pass


@lru_cache(maxsize=1)
def _prompt_data() -> dict:
    return yaml.safe_load(_data_text("prompts.yaml"))


OPEN_MINDED_RULE: str = _prompt_data()["open_minded_rule"]
DELIBERATION_RULES: tuple[str, ...] = tuple(_prompt_data()["deliberation_rules"])


@dataclass(frozen=True)
class PromptBundle:
    system_prompt: str
    vote_prompt: str
    open_minded_rule_present: bool
    initial_vote_line_present: bool


def initial_vote_line(persona: Persona) -> str:
    return f"Initial vote: {persona.initial_vote.value}."


def _profile_section(persona: Persona) -> list[str]:
    for name in ("occupation", "personality", "speaking_style"):
        if not str(getattr(persona, name, "") or "").strip():
            raise PromptAssemblyError(f"persona {persona.id}: missing field '{name}'")
    if not persona.key_arguments:
        raise PromptAssemblyError(f"persona {persona.id}: missing field 'key_arguments'")
    name = f"{persona.id} -- {persona.title}" if persona.title else str(persona.id)
    lines = [
        PROFILE_HEADER,
        f"You are {name}.",
        f"Occupation: {persona.occupation}",
        f"Personality: {persona.personality}",
        f"Speaking style: {persona.speaking_style}",
        f"Key arguments: {' '.join(persona.key_arguments)}",
    ]
    if persona.emotional_triggers:
        lines.append(f"Emotional triggers: {'; '.join(persona.emotional_triggers)}")
    return lines


def render_case_file(case_file: CaseFile) -> list[str]:
    lines = [
        CASE_HEADER,
        f"Scene setting: {case_file.scene_setting}",
        f"Case summary: {case_file.case_summary}",
    ]
    for item in case_file.evidence:
        lines += [
            f"Evidence #{item.id}: {item.name}",
            f"Category: {item.category.value}.",
            f"Description: {item.description}",
            f"Prosecution argues: {item.prosecution_argument}",
        ]
    return lines


def assemble_system_prompt(persona: Persona, case_file: CaseFile, condition: Condition) -> PromptBundle:
    """Build the juror system prompt: profile, case file, rules, initial vote.

    Sections are separated by blank lines. The open-minded rule is the last
    rules line and the initial vote is the final line, so conditions differ
    from Baseline by exactly one line each.
    """
    condition = Condition.parse(condition)
    rules = list(DELIBERATION_RULES)
    open_minded = condition is Condition.OPEN_MINDED
    if open_minded:
        rules.append(OPEN_MINDED_RULE)

    with_vote = condition is not Condition.NO_INITIAL_VOTE
    if with_vote and persona.initial_vote is None:
        raise PromptAssemblyError(f"persona {persona.id}: missing field 'initial_vote'")

    body = "\n\n".join(
        "\n".join(section)
        for section in (_profile_section(persona), render_case_file(case_file), [RULES_HEADER, *rules])
    )
    if with_vote:
        body += "\n" + initial_vote_line(persona)
    return PromptBundle(
        system_prompt=body,
        vote_prompt=assemble_vote_prompt(),
        open_minded_rule_present=open_minded,
        initial_vote_line_present=with_vote,
    )


def assemble_vote_prompt() -> str:
    return _prompt_data()["vote_prompt"]
