"""Impersonation attacks: prompt construction, chat execution, attack records.

Four strategies are supported.  `naive` and `role_play` are single exchanges;
`self_prompt` chains two (the model writes its own instruction, which is fed
back); `tree_of_thoughts` runs plan generation, plan voting, draft generation
and a final draft vote.  Prompt text lives in versioned template files with
{original_text}/{examples}/{output_instruction} slots, and golden fixtures pin
the rendered bytes.

Every exchange with the endpoint is appended to the attack transcript; the
transcript's final assistant entry is always the selected passage, so
`generated_text` can be read off uniformly for all strategies.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import time
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import requests

from .corpus import AuthorSplit
from .seeds import seed_for

log = logging.getLogger(__name__)

STRATEGY_KINDS = ("naive", "self_prompt", "role_play", "tree_of_thoughts")

Message = dict  # {"role": ..., "content": ...}


class ChatError(Exception):
    """Base class for chat endpoint failures."""


class ChatConfigError(ChatError):
    pass


class ChatAuthError(ChatError):
    pass


class ChatQuotaError(ChatError):
    pass


class ChatTimeoutError(ChatError):
    pass


class ChatEndpointError(ChatError):
    pass


class AttackError(Exception):
    """The attack could not produce a usable passage; carries the reason."""


@dataclass(frozen=True)
class PromptStrategy:
    kind: str
    n_plans: int = 3
    plan_vote_rounds: int = 5
    n_drafts: int = 5

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}; expected {STRATEGY_KINDS}")
        if min(self.n_plans, self.plan_vote_rounds, self.n_drafts) < 1:
            raise ValueError("tree-of-thoughts parameters must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_plans": self.n_plans,
            "plan_vote_rounds": self.plan_vote_rounds,
            "n_drafts": self.n_drafts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PromptStrategy":
        if isinstance(d, str):
            return cls(kind=d)
        return cls(**d)


@dataclass(frozen=True)
class SourceSelection:
    source_author: str
    source_text: str


@dataclass
class AttackRecord:
    target_author: str
    strategy: PromptStrategy
    source_text: str
    examples_used: list[str]
    generated_text: str
    transcript: list[Message]
    model_meta: dict

    def to_dict(self) -> dict:
        return {
            "target_author": self.target_author,
            "strategy": self.strategy.to_dict(),
            "source_text": self.source_text,
            "examples_used": list(self.examples_used),
            "generated_text": self.generated_text,
            "transcript": list(self.transcript),
            "model_meta": dict(self.model_meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackRecord":
        return cls(
            target_author=d["target_author"],
            strategy=PromptStrategy.from_dict(d["strategy"]),
            source_text=d["source_text"],
            examples_used=list(d["examples_used"]),
            generated_text=d["generated_text"],
            transcript=list(d["transcript"]),
            model_meta=dict(d.get("model_meta", {})),
        )


# ---------------------------------------------------------------------------
# templates and message construction


@lru_cache(maxsize=32)
def load_template(name: str) -> str:
    path = Path(__file__).parent / "templates" / f"{name}.txt"
    return path.read_text(encoding="utf-8").rstrip("\n")


def _examples_block(examples: Sequence[str]) -> str:
    return "\n\n".join(examples)


def build_messages(strategy: PromptStrategy, source: str, examples: Sequence[str]) -> list[Message]:
    """The opening message list for a strategy; byte-stable against fixtures.

    For tree_of_thoughts this is the plan-generation message; the later
    stages (votes, drafts) have their own builders below.
    """
    if not examples:
        raise ValueError("build_messages requires at least one example snippet")
    ex = _examples_block(examples)
    if strategy.kind == "naive":
        content = load_template("naive").format(
            output_instruction=load_template("output_rewrite"),
            original_text=source,
            examples=ex,
        )
        return [{"role": "user", "content": content}]
    if strategy.kind == "self_prompt":
        content = load_template("self_prompt_meta").format(
            output_instruction=load_template("output_instruction_request"),
            original_text=source,
            examples=ex,
        )
        return [{"role": "user", "content": content}]
    if strategy.kind == "role_play":
        user = load_template("role_play_user").format(
            output_instruction=load_template("output_rewrite"),
            original_text=source,
            examples=ex,
        )
        return [
            {"role": "system", "content": load_template("role_play_system")},
            {"role": "user", "content": user},
        ]
    if strategy.kind == "tree_of_thoughts":
        return [{"role": "user", "content": plan_prompt(source, examples)}]
    raise ValueError(f"unknown strategy kind {strategy.kind!r}")


def _tot_base(source: str, examples: Sequence[str]) -> str:
    return load_template("tot_base").format(
        original_text=source, examples=_examples_block(examples)
    )


def plan_prompt(source: str, examples: Sequence[str]) -> str:
    return load_template("tot_plan").format(
        base=_tot_base(source, examples),
        output_instruction=load_template("output_plan"),
    )


def draft_messages(source: str, examples: Sequence[str], plan: str) -> list[Message]:
    content = load_template("tot_draft").format(
        base=_tot_base(source, examples),
        plan=plan,
        output_instruction=load_template("output_rewrite"),
    )
    return [{"role": "user", "content": content}]


def vote_messages(instruction: str, choices: Sequence[str]) -> list[Message]:
    numbered = "\n\n".join(f"Choice {i + 1}:\n{c}" for i, c in enumerate(choices))
    content = load_template("vote").format(
        instruction=instruction,
        output_instruction=load_template("output_vote"),
        choices=numbered,
    )
    return [{"role": "user", "content": content}]


def self_prompt_followup_messages(
    instruction: str, source: str, examples: Sequence[str]
) -> list[Message]:
    content = load_template("self_prompt_followup").format(
        instruction=instruction,
        output_instruction=load_template("output_rewrite"),
        original_text=source,
        examples=_examples_block(examples),
    )
    return [{"role": "user", "content": content}]


# ---------------------------------------------------------------------------
# reply handling

_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\n(.*?)\n?```$", re.DOTALL)
_VOTE_LINE_RE = re.compile(r"choice\s*[:#]?\s*(\d+)", re.IGNORECASE)
_QUOTE_PAIRS = (('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’"))


def extract_output(text: str) -> str:
    """Strip markdown fences and wrapping quote pairs from a model reply."""
    t = text.strip()
    m = _FENCE_RE.match(t)
    if m:
        t = m.group(1).strip()
    for open_q, close_q in _QUOTE_PAIRS:
        if len(t) >= 2 and t.startswith(open_q) and t.endswith(close_q):
            t = t[1:-1].strip()
            break
    return t


def parse_vote(reply: str, n_choices: int) -> int | None:
    """0-based index of the chosen candidate, or None if no valid vote found.

    Looks for a 'Choice: <n>' line, scanning from the end; a reply that is
    just a bare number also counts.
    """
    stripped = reply.strip()
    if stripped.isdigit():
        n = int(stripped)
        return n - 1 if 1 <= n <= n_choices else None
    for line in reversed(stripped.splitlines()):
        m = _VOTE_LINE_RE.search(line)
        if m:
            n = int(m.group(1))
            return n - 1 if 1 <= n <= n_choices else None
    return None


def plurality_winner(votes: Sequence[int]) -> int:
    """Most-voted candidate index; exact ties resolve to the lowest index."""
    if not votes:
        raise ValueError("no votes")
    counts = Counter(votes)
    best = max(counts.values())
    return min(i for i, c in counts.items() if c == best)


# ---------------------------------------------------------------------------
# chat clients


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "CHAT_API_KEY"
    timeout: float = 60.0
    max_attempts: int = 5
    backoff: float = 0.5


class HttpChatClient:
    """OpenAI-compatible chat-completions client over plain HTTP.

    Decoding parameters (temperature, penalties, ...) are deliberately left
    out of the request so the service's defaults apply.  Transient failures
    (timeouts, connection errors, 429, 5xx) are retried with exponential
    backoff up to max_attempts; auth failures and other 4xx are raised
    immediately.  `last_attempts` records how many attempts the most recent
    call used.
    """

    def __init__(self, endpoint: EndpointConfig, transport=None, sleep=time.sleep):
        self.endpoint = endpoint
        self.transport = transport or requests.post
        self.sleep = sleep
        self.last_attempts = 0

    def describe(self) -> str:
        return f"http:{self.endpoint.model}@{self.endpoint.base_url}"

    def complete(self, messages: Sequence[Message]) -> str:
        key = os.environ.get(self.endpoint.api_key_env, "").strip()
        if not key:
            raise ChatConfigError(
                f"missing API key: set the {self.endpoint.api_key_env} environment variable"
            )
        url = self.endpoint.base_url.rstrip("/") + "/chat/completions"
        payload = {"model": self.endpoint.model, "messages": list(messages)}
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

        failure: tuple[type[ChatError], str] | None = None
        for attempt in range(1, self.endpoint.max_attempts + 1):
            self.last_attempts = attempt
            try:
                resp = self.transport(url, json=payload, headers=headers,
                                      timeout=self.endpoint.timeout)
            except requests.Timeout as exc:
                failure = (ChatTimeoutError, f"timeout: {exc}")
            except requests.ConnectionError as exc:
                failure = (ChatEndpointError, f"connection error: {exc}")
            else:
                code = resp.status_code
                if code == 200:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError, ValueError) as exc:
                        raise ChatEndpointError(f"malformed completion response: {exc}") from exc
                if code in (401, 403):
                    raise ChatAuthError(f"authentication failed (HTTP {code})")
                if code == 429:
                    failure = (ChatQuotaError, "rate limited or quota exhausted (HTTP 429)")
                elif code >= 500:
                    failure = (ChatEndpointError, f"server error (HTTP {code})")
                else:
                    raise ChatEndpointError(f"unexpected HTTP {code}")
            if attempt < self.endpoint.max_attempts:
                delay = self.endpoint.backoff * (2 ** (attempt - 1))
                log.warning("chat attempt %d/%d failed (%s); retrying in %.1fs",
                            attempt, self.endpoint.max_attempts, failure[1], delay)
                self.sleep(delay)
        exc_type, reason = failure
        raise exc_type(f"{reason} after {self.endpoint.max_attempts} attempts")


def chat(endpoint: EndpointConfig, messages: Sequence[Message]) -> str:
    """One-shot convenience wrapper around HttpChatClient."""
    return HttpChatClient(endpoint).complete(messages)


def exchange_key(messages: Sequence[Message]) -> str:
    """Content hash identifying a request, used by stubs and transcript stores."""
    canonical = json.dumps(list(messages), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class ScriptedStubClient:
    """Replays a fixed sequence of replies; used for golden-transcript tests."""

    def __init__(self, replies: Sequence[str]):
        self._replies = list(replies)
        self._next = 0
        self.calls: list[list[Message]] = []

    def describe(self) -> str:
        return "stub:scripted"

    def complete(self, messages: Sequence[Message]) -> str:
        self.calls.append(list(messages))
        if self._next >= len(self._replies):
            raise ChatEndpointError("scripted stub ran out of replies")
        reply = self._replies[self._next]
        self._next += 1
        return reply


class DirectoryStubClient:
    """Looks up canned replies by request content hash: <dir>/<key>.txt,
    falling back to <dir>/default.txt when present."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise ChatConfigError(f"stub transcript directory not found: {self.directory}")

    def describe(self) -> str:
        return f"stub:dir:{self.directory.name}"

    def complete(self, messages: Sequence[Message]) -> str:
        path = self.directory / f"{exchange_key(messages)}.txt"
        if not path.exists():
            path = self.directory / "default.txt"
        if not path.exists():
            raise ChatEndpointError(
                f"no stub reply for exchange {exchange_key(messages)} in {self.directory}"
            )
        return path.read_text(encoding="utf-8")


class LexicalStubClient:
    """Deterministic offline adversary: votes get 'Choice: 1', everything else
    gets text sampled from a shared vocabulary with no author-specific habits.

    Function words are drawn uniformly (no individual transition preferences)
    at roughly the rate fluent text uses them, content words uniformly from
    the full shared pool -- a maximally lexically-diverse rewriter."""

    def __init__(
        self,
        vocabulary: Sequence[str],
        seed: int = 0,
        reply_tokens: int = 160,
        function_words: Sequence[str] = (),
        function_rate: float = 0.5,
    ):
        if not vocabulary:
            raise ChatConfigError("lexical stub needs a non-empty vocabulary")
        self.function_words = list(function_words)
        self.content_words = [w for w in vocabulary if w not in set(self.function_words)]
        if not self.content_words:
            self.content_words = list(vocabulary)
        self.seed = seed
        self.reply_tokens = reply_tokens
        self.function_rate = function_rate if self.function_words else 0.0

    def describe(self) -> str:
        return f"stub:lexical:seed={self.seed}"

    def complete(self, messages: Sequence[Message]) -> str:
        content = messages[-1]["content"]
        if "conclude which is most promising" in content:
            return "Choice: 1"
        rng = random.Random(seed_for(self.seed, "lexical-stub", exchange_key(messages)))
        n = max(20, self.reply_tokens + rng.randrange(-20, 21))
        words = []
        run = 0
        target = rng.randrange(8, 15)
        for _ in range(n):
            if self.function_words and rng.random() < self.function_rate:
                words.append(rng.choice(self.function_words))
            else:
                words.append(rng.choice(self.content_words))
            run += 1
            if run >= target:
                words[-1] = words[-1] + "."
                run = 0
                target = rng.randrange(8, 15)
        if not words[-1].endswith("."):
            words[-1] = words[-1] + "."
        return " ".join(words)


# ---------------------------------------------------------------------------
# attack execution


def select_source(corpus: Sequence[AuthorSplit], rng_seed: int) -> SourceSelection:
    """Seeded choice of one author to donate the source text; their unknown
    material, concatenated, becomes the source and they are excluded as a
    target."""
    eligible = sorted((s for s in corpus if s.unknown), key=lambda s: s.author_id)
    if len(eligible) < 2:
        raise ValueError("source selection needs at least two authors with unknown text")
    rng = random.Random(seed_for(rng_seed, "source-selection"))
    chosen = rng.choice(eligible)
    return SourceSelection(
        source_author=chosen.author_id,
        source_text="\n".join(d.clean_text for d in chosen.unknown),
    )


_VOTE_RETRIES = 2  # re-asks after the first malformed vote reply


def run_attack(
    client,
    strategy: PromptStrategy,
    source: SourceSelection,
    examples: Sequence[str],
    *,
    target_author: str,
    example_ids: Sequence[str] = (),
    model_meta: dict | None = None,
) -> AttackRecord:
    """Execute one impersonation attempt and persist the full transcript.

    Endpoint failures (after the client's own retries) and unparseable votes
    surface as AttackError so callers can record the failure and move on.
    """
    if not examples:
        raise ValueError("run_attack requires at least one example snippet")
    if target_author == source.source_author:
        raise ValueError(
            f"source author {source.source_author!r} cannot also be the target"
        )

    transcript: list[Message] = []

    def ask(messages: Sequence[Message]) -> str:
        try:
            reply = client.complete(messages)
        except ChatError as exc:
            raise AttackError(f"endpoint failure: {exc}") from exc
        transcript.extend(messages)
        transcript.append({"role": "assistant", "content": reply})
        return reply

    def ask_vote(messages: Sequence[Message], n_choices: int) -> int:
        for _ in range(1 + _VOTE_RETRIES):
            idx = parse_vote(ask(messages), n_choices)
            if idx is not None:
                return idx
        raise AttackError(f"unparseable vote reply after {1 + _VOTE_RETRIES} attempts")

    kind = strategy.kind
    if kind in ("naive", "role_play"):
        final = extract_output(ask(build_messages(strategy, source.source_text, examples)))
    elif kind == "self_prompt":
        instruction = extract_output(
            ask(build_messages(strategy, source.source_text, examples))
        )
        final = extract_output(
            ask(self_prompt_followup_messages(instruction, source.source_text, examples))
        )
    elif kind == "tree_of_thoughts":
        opening = build_messages(strategy, source.source_text, examples)
        plans = [extract_output(ask(opening)) for _ in range(strategy.n_plans)]
        plan_instruction = opening[0]["content"]
        votes = [
            ask_vote(vote_messages(plan_instruction, plans), len(plans))
            for _ in range(strategy.plan_vote_rounds)
        ]
        winning_plan = plans[plurality_winner(votes)]
        drafting = draft_messages(source.source_text, examples, winning_plan)
        drafts = [extract_output(ask(drafting)) for _ in range(strategy.n_drafts)]
        chosen = ask_vote(vote_messages(drafting[0]["content"], drafts), len(drafts))
        final = drafts[chosen]
        # restate the winner so the transcript's last assistant entry is the passage
        transcript.append({"role": "assistant", "content": final})
    else:  # pragma: no cover - guarded by PromptStrategy
        raise ValueError(f"unknown strategy kind {kind!r}")

    meta = {"endpoint": client.describe() if hasattr(client, "describe") else "unknown",
            "decoding": "service-defaults"}
    if model_meta:
        meta.update(model_meta)
    return AttackRecord(
        target_author=target_author,
        strategy=strategy,
        source_text=source.source_text,
        examples_used=list(example_ids),
        generated_text=final,
        transcript=transcript,
        model_meta=meta,
    )
