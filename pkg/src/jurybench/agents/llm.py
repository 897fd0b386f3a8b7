"""Juror backend speaking an OpenAI-compatible chat-completions protocol."""

from __future__ import annotations

import json
import logging
import os
import re
import time
from typing import Any, Mapping, Sequence

import httpx

from ..domain import (
    ALL_JURORS,
    Ballot,
    BackendSpec,
    CaseFile,
    ConfigError,
    Event,
    JurorId,
    Persona,
    RunConfig,
    Termination,
    Utterance,
    Vote,
    VoteRound,
)
from ..prompts import assemble_system_prompt
from .base import AgentContext, StructuredOutputError, TransportError

logger = logging.getLogger(__name__)

API_KEY_ENV = "JURYBENCH_API_KEY"
FALLBACK_API_KEY_ENV = "OPENAI_API_KEY"
BASE_URL_ENV = "JURYBENCH_BASE_URL"
DEFAULT_REASKS = 2

REASK_MESSAGE = (
    "Your reply could not be parsed. Respond with only a JSON object of the form "
    '{"vote": "GUILTY" or "NOT_GUILTY", "reasoning": "<one sentence>"} and nothing else.'
)


class BallotParseError(ValueError):
    pass


def resolve_api_key(env: Mapping[str, str] | None = None) -> str:
    env = os.environ if env is None else env
    key = env.get(API_KEY_ENV) or env.get(FALLBACK_API_KEY_ENV)
    if not key:
        raise ConfigError("api_key", f"set {API_KEY_ENV} (or {FALLBACK_API_KEY_ENV}) for llm_chat backends")
    return key


def resolve_base_url(spec: BackendSpec, env: Mapping[str, str] | None = None) -> str:
    env = os.environ if env is None else env
    return env.get(BASE_URL_ENV) or str(spec.endpoint)


def _extract_json_object(text: str) -> Any:
    text = re.sub(r"```(?:json)?", "", text)
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = json.JSONDecoder().raw_decode(text, start)
            return obj
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
    raise BallotParseError("no JSON object in reply")


def parse_ballot(reply: str, juror: JurorId) -> Ballot:
    """Parse a structured vote reply; raise BallotParseError if malformed."""
    obj = _extract_json_object(reply)
    if not isinstance(obj, dict):
        raise BallotParseError("reply is not a JSON object")
    raw_vote = obj.get("vote")
    reasoning = obj.get("reasoning")
    if not isinstance(raw_vote, str):
        raise BallotParseError("missing 'vote'")
    token = re.sub(r"[\s-]+", "_", raw_vote.strip().upper())
    if token not in (Vote.GUILTY.value, Vote.NOT_GUILTY.value):
        raise BallotParseError(f"invalid vote {raw_vote!r}")
    if not isinstance(reasoning, str) or not reasoning.strip():
        raise BallotParseError("missing 'reasoning'")
    return Ballot(juror, Vote(token), reasoning.strip())


class ChatClient:
    """Minimal chat-completions client with transport retries.

    Each instance owns its own ``httpx.Client``; instances share no state, so
    separate runs may use separate clients concurrently.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str,
        *,
        temperature: float = 0.9,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.model = model
        self.temperature = temperature
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._http = httpx.Client(
            base_url=base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._http.close()

    def complete(self, messages: Sequence[Mapping[str, str]], *, json_mode: bool = False, seed: int | None = None) -> str:
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": list(messages),
            "temperature": self.temperature,
        }
        if json_mode:
            payload["response_format"] = {"type": "json_object"}
        if seed is not None:
            payload["seed"] = seed
        last_error = "no attempt made"
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._http.post("/chat/completions", json=payload)
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    try:
                        content = resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        last_error = f"malformed completion payload: {exc!r}"
                    else:
                        return content if isinstance(content, str) else ""
                else:
                    last_error = f"HTTP {resp.status_code}"
                    if resp.status_code < 500 and resp.status_code != 429:
                        raise TransportError(f"chat endpoint rejected request: {last_error}", attempt)
            logger.warning("chat request failed (attempt %d/%d): %s", attempt, self.max_attempts, last_error)
            if attempt < self.max_attempts and self.backoff > 0:
                time.sleep(self.backoff * 2 ** (attempt - 1))
        raise TransportError(f"chat endpoint unavailable: {last_error}", self.max_attempts)


def render_transcript(events: Sequence[Event]) -> str:
    lines = []
    for e in events:
        if isinstance(e, Utterance):
            lines.append(f"{e.speaker}: {e.text}")
        elif isinstance(e, VoteRound):
            tally = ", ".join(f"{b.juror}: {b.vote.value}" for b in e.ballots)
            lines.append(f"[Vote after turn {e.turn}] {tally}")
        elif isinstance(e, Termination):
            lines.append(f"[Deliberation ended at turn {e.turn}]")
    return "\n".join(lines) if lines else "(The deliberation is just beginning; nobody has spoken yet.)"


class LlmChatBackend:
    """Juror backend that asks a chat model for each utterance and ballot."""

    def __init__(
        self,
        client: ChatClient,
        config: RunConfig,
        personas: Sequence[Persona],
        case_file: CaseFile,
        *,
        reasks: int = DEFAULT_REASKS,
    ):
        self.client = client
        self.config = config
        self.reasks = reasks
        self.system_prompts = {
            p.id: assemble_system_prompt(p, case_file, config.condition).system_prompt for p in personas
        }

    def _seed(self, ctx: AgentContext, salt: int) -> int:
        return (self.config.seed * 1_000_003 + ctx.turn * 101 + int(ctx.juror) * 7 + salt) % 2**31

    def speak(self, ctx: AgentContext) -> str:
        messages = [
            {"role": "system", "content": self.system_prompts[ctx.juror]},
            {
                "role": "user",
                "content": (
                    f"Transcript so far:\n{render_transcript(ctx.transcript)}\n\n"
                    f"It is turn {ctx.turn}. You are {ctx.juror}. Give your next contribution "
                    "to the deliberation, in character, in a few sentences."
                ),
            },
        ]
        text = self.client.complete(messages, seed=self._seed(ctx, 0)).strip()
        return text or "..."

    def cast_ballot(self, ctx: AgentContext, vote_prompt: str) -> Ballot:
        messages: list[dict[str, str]] = [
            {"role": "system", "content": self.system_prompts[ctx.juror]},
            {
                "role": "user",
                "content": f"Transcript so far:\n{render_transcript(ctx.transcript)}\n\n{vote_prompt}",
            },
        ]
        reply = ""
        for attempt in range(1, self.reasks + 2):
            reply = self.client.complete(messages, json_mode=True, seed=self._seed(ctx, attempt))
            try:
                return parse_ballot(reply, ctx.juror)
            except BallotParseError as exc:
                logger.info("%s ballot unparseable (attempt %d): %s", ctx.juror, attempt, exc)
                messages += [
                    {"role": "assistant", "content": reply},
                    {"role": "user", "content": REASK_MESSAGE},
                ]
        raise StructuredOutputError(ctx.juror, self.reasks + 1, reply)


class LlmSelector:
    """Model-driven speaker selection; returns the raw model reply."""

    def __init__(self, client: ChatClient):
        self.client = client

    def __call__(self, transcript: Sequence[Event], turn: int) -> str:
        names = ", ".join(str(j) for j in ALL_JURORS)
        messages = [
            {
                "role": "system",
                "content": (
                    "You moderate a twelve-person jury deliberation and choose who speaks next. "
                    "Rotate turns fairly and make sure jurors in the minority get to speak."
                ),
            },
            {
                "role": "user",
                "content": (
                    f"Transcript so far:\n{render_transcript(transcript)}\n\n"
                    f"Choose the speaker for turn {turn} from: {names}. "
                    "Reply with only the juror name."
                ),
            },
        ]
        return self.client.complete(messages)


def make_chat_client(spec: BackendSpec, config: RunConfig, **kwargs: Any) -> ChatClient:
    return ChatClient(
        resolve_base_url(spec),
        str(spec.model_name),
        resolve_api_key(),
        temperature=config.temperature,
        **kwargs,
    )
