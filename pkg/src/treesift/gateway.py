"""Uniform interface to the policy and critic models.

Two interchangeable policy backends are provided: ``PolicyClient`` speaks
the JSON-over-HTTP chat-completion protocol of hosted model services, and
``MockPolicyGateway`` is a fully deterministic scripted stand-in for tests
and dry runs. Both expose ``propose_steps`` and ``complete_rollout``;
critic backends expose ``judge``.

The step grammar follows the step-wise answering template: every
intermediate step ends with the ``<end>`` marker, and the final line starts
with ``### Final Answer:`` and carries the answer in ``\\boxed{...}``.
"""

from __future__ import annotations

import base64
import json
import logging
import mimetypes
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import requests

from .corpus import Sample
from .prompts import render_critic_prompt, render_step_answer_prompt

logger = logging.getLogger(__name__)

END_MARKER = "<end>"
FINAL_ANSWER_MARKER = "### Final Answer"

_TRUE_RE = re.compile(r"\btrue\b", re.IGNORECASE)
_FALSE_RE = re.compile(r"\bfalse\b", re.IGNORECASE)


class GatewayError(Exception):
    """Base class for model-gateway failures."""


class TransportError(GatewayError):
    """Endpoint unreachable or persistently failing after retries."""


class StepParseError(GatewayError):
    """A model reply could not be parsed into a reasoning step."""


class AmbiguousVerdictError(GatewayError):
    """Critic reply contains both or neither of the true/false keywords."""


@dataclass(frozen=True)
class ReasoningStep:
    text: str
    is_final: bool = False
    boxed_answer: Optional[str] = None

    def __post_init__(self):
        if self.is_final != (self.boxed_answer is not None):
            raise ValueError("is_final must hold exactly when a boxed answer is present")


@dataclass(frozen=True)
class Verdict:
    correct: bool
    raw_reply: str


@dataclass(frozen=True)
class Rollout:
    steps: tuple[ReasoningStep, ...]
    terminated: str  # "answered" | "step_limit"
    diagnostic: Optional[str] = None

    ANSWERED = "answered"
    STEP_LIMIT = "step_limit"

    @property
    def answered(self) -> bool:
        return self.terminated == self.ANSWERED


@dataclass(frozen=True)
class PolicyEndpoint:
    base_url: str
    model_name: str
    timeout: float = 120.0
    max_retries: int = 3
    request_concurrency_limit: int = 8
    max_tokens: int = 1024

    def __post_init__(self):
        if self.request_concurrency_limit < 1:
            raise ValueError("request_concurrency_limit must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class MockPolicySpec:
    per_sample_solve_probability: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0
    steps_per_rollout: int = 3
    default_solve_probability: float = 0.0

    def __post_init__(self):
        for sample_id, p in self.per_sample_solve_probability.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"solve probability for {sample_id!r} outside [0, 1]")
        if not 0.0 <= self.default_solve_probability <= 1.0:
            raise ValueError("default_solve_probability outside [0, 1]")
        if self.steps_per_rollout < 1:
            raise ValueError("steps_per_rollout must be >= 1")

    @classmethod
    def from_file(cls, path: str | Path) -> "MockPolicySpec":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            per_sample_solve_probability=dict(data.get("per_sample_solve_probability", {})),
            seed=int(data.get("seed", 0)),
            steps_per_rollout=int(data.get("steps_per_rollout", 3)),
            default_solve_probability=float(data.get("default_solve_probability", 0.0)),
        )


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def extract_boxed_answer(text: str) -> Optional[str]:
    """Contents of the last balanced ``\\boxed{...}`` in ``text``, if any."""
    marker = "\\boxed{"
    pos = len(text)
    while True:
        start = text.rfind(marker, 0, pos)
        if start < 0:
            return None
        depth = 1
        i = start + len(marker)
        while i < len(text) and depth > 0:
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
            i += 1
        if depth == 0:
            return text[start + len(marker):i - 1]
        pos = start  # unbalanced occurrence: try an earlier one


def _final_step_from(segment: str) -> ReasoningStep:
    boxed = extract_boxed_answer(segment)
    if boxed is None:
        raise StepParseError("final-answer line carries no boxed answer")
    return ReasoningStep(text=segment.strip(), is_final=True, boxed_answer=boxed)


def parse_next_step(reply: str) -> ReasoningStep:
    """Parse a model reply into its next single reasoning step.

    An intermediate step is everything up to the first ``<end>`` marker
    (marker stripped). A final step is the ``### Final Answer`` line, which
    terminates without a marker. A reply with neither marker is accepted as
    final only if it carries a boxed answer; otherwise it is unparseable.
    """
    end_at = reply.find(END_MARKER)
    final_at = reply.find(FINAL_ANSWER_MARKER)
    if final_at >= 0 and (end_at < 0 or final_at < end_at):
        segment = reply[final_at:]
        newline = segment.find("\n")
        if newline >= 0:
            segment = segment[:newline]
        return _final_step_from(segment)
    if end_at >= 0:
        text = reply[:end_at].strip()
        if not text:
            raise StepParseError("empty step before <end> marker")
        return ReasoningStep(text=text, is_final=False, boxed_answer=None)
    boxed = extract_boxed_answer(reply)
    if boxed is not None:
        return ReasoningStep(text=reply.strip(), is_final=True, boxed_answer=boxed)
    raise StepParseError("reply has no <end> marker, final-answer line, or boxed answer")


def render_step(step: ReasoningStep) -> str:
    return step.text if step.is_final else f"{step.text} {END_MARKER}"


def render_transcript(steps: Sequence[ReasoningStep]) -> str:
    """Reconstruct the assistant-side text of a reasoning chain."""
    return "\n".join(render_step(s) for s in steps)


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def dedupe_steps(steps: Sequence[ReasoningStep]) -> list[ReasoningStep]:
    """Drop steps that are string-equal after whitespace normalization."""
    seen: set[tuple[str, bool]] = set()
    out: list[ReasoningStep] = []
    for step in steps:
        key = (_normalize_ws(step.text), step.is_final)
        if key in seen:
            continue
        seen.add(key)
        out.append(step)
    return out


def parse_verdict_reply(reply: str) -> bool:
    has_true = _TRUE_RE.search(reply) is not None
    has_false = _FALSE_RE.search(reply) is not None
    if has_true == has_false:
        raise AmbiguousVerdictError(f"cannot read true/false from reply: {reply!r}")
    return has_true


def judge_answer(critic, question: str, ground_truth: str, generated: str) -> Verdict:
    """Ask the critic backend for a verdict on a generated rationale+answer."""
    return critic.judge(question, ground_truth, generated)


def judge_correct_fail_closed(
    critic, question: str, ground_truth: str, generated: str
) -> Verdict:
    """Judge with one re-ask on an ambiguous reply, then count as incorrect.

    Fail-closed keeps difficulty estimates conservative: an unreadable
    verdict never marks a sample solved.
    """
    for attempt in range(2):
        try:
            return critic.judge(question, ground_truth, generated)
        except AmbiguousVerdictError as exc:
            last = exc
            logger.warning("ambiguous critic reply (attempt %d): %s", attempt + 1, exc)
    return Verdict(correct=False, raw_reply=f"[unreadable after retry] {last}")


# ---------------------------------------------------------------------------
# HTTP backends
# ---------------------------------------------------------------------------

API_KEY_ENV_VAR = "MODEL_API_KEY"


def _image_content_part(image_ref: str) -> dict:
    path = Path(image_ref)
    if path.is_file():
        mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        payload = base64.b64encode(path.read_bytes()).decode("ascii")
        url = f"data:{mime};base64,{payload}"
    else:
        url = image_ref
    return {"type": "image_url", "image_url": {"url": url}}


class ChatCompletionClient:
    """Minimal chat-completion HTTP client with retries and a global in-flight cap."""

    def __init__(self, endpoint: PolicyEndpoint, session: Optional[requests.Session] = None):
        self.endpoint = endpoint
        self._session = session or requests.Session()
        self._semaphore = threading.BoundedSemaphore(endpoint.request_concurrency_limit)

    def complete(
        self, messages: list[dict], n: int = 1, temperature: float = 0.0
    ) -> list[str]:
        """POST one chat-completion request; return the n reply texts."""
        payload = {
            "model": self.endpoint.model_name,
            "messages": messages,
            "temperature": temperature,
            "n": n,
            "max_tokens": self.endpoint.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV_VAR)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = self.endpoint.base_url.rstrip("/") + "/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.endpoint.max_retries + 1):
            if attempt:
                time.sleep(self._backoff_delay(attempt, last_error))
            try:
                with self._semaphore:
                    response = self._session.post(
                        url, json=payload, headers=headers, timeout=self.endpoint.timeout
                    )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = _HttpStatusError(response)
                continue
            if response.status_code != 200:
                raise TransportError(
                    f"{url} returned {response.status_code}: {response.text[:200]}"
                )
            try:
                body = response.json()
                return [choice["message"]["content"] for choice in body["choices"]]
            except (ValueError, KeyError, TypeError) as exc:
                raise TransportError(f"malformed completion response: {exc}") from exc
        raise TransportError(f"{url} failed after {self.endpoint.max_retries} retries: {last_error}")

    @staticmethod
    def _backoff_delay(attempt: int, last_error: Exception | None) -> float:
        if isinstance(last_error, _HttpStatusError) and last_error.retry_after is not None:
            return last_error.retry_after
        return 0.5 * 2 ** (attempt - 1)


class _HttpStatusError(Exception):
    def __init__(self, response: requests.Response):
        super().__init__(f"HTTP {response.status_code}")
        self.retry_after: Optional[float] = None
        advisory = response.headers.get("Retry-After")
        if advisory is not None:
            try:
                self.retry_after = float(advisory)
            except ValueError:
                pass


class PolicyClient:
    """Policy backend over a hosted chat-completion endpoint.

    The conversation layout is part of the wire contract: the system turn
    is the rendered step-wise answering prompt, the user turn carries the
    image (base64 data URL for local files, plain URL otherwise) plus the
    bare question text, and an assistant turn holds the reasoning prefix
    when one exists.
    """

    def __init__(self, endpoint: PolicyEndpoint, session: Optional[requests.Session] = None):
        self._client = ChatCompletionClient(endpoint, session)
        self.endpoint = endpoint
        self.rollout_temperature = 0.0

    def _messages(self, sample: Sample, prefix: Sequence[ReasoningStep]) -> list[dict]:
        user_parts: list[dict] = []
        if sample.image_ref:
            user_parts.append(_image_content_part(sample.image_ref))
        user_parts.append({"type": "text", "text": sample.prompt})
        messages = [
            {"role": "system", "content": render_step_answer_prompt(sample.prompt)},
            {"role": "user", "content": user_parts},
        ]
        if prefix:
            messages.append({"role": "assistant", "content": render_transcript(prefix)})
        return messages

    def propose_steps(
        self,
        sample: Sample,
        prefix: Sequence[ReasoningStep],
        k: int,
        temperature: float,
    ) -> list[ReasoningStep]:
        if k < 1:
            raise ValueError("k must be >= 1")
        if any(step.is_final for step in prefix):
            raise ValueError("prefix must not contain a final step")
        replies = self._client.complete(self._messages(sample, prefix), n=k, temperature=temperature)
        candidates: list[ReasoningStep] = []
        for reply in replies:
            try:
                candidates.append(parse_next_step(reply))
            except StepParseError as exc:
                logger.warning("unparseable candidate for %s: %s", sample.id, exc)
        return dedupe_steps(candidates)

    def complete_rollout(
        self,
        sample: Sample,
        prefix: Sequence[ReasoningStep],
        step_limit: int,
        draw: int = 0,
    ) -> Rollout:
        if step_limit < 1:
            raise ValueError("step_limit must be >= 1")
        del draw  # sampling is naturally independent server-side
        steps = list(prefix)
        for _ in range(step_limit):
            replies = self._client.complete(
                self._messages(sample, steps), n=1, temperature=self.rollout_temperature
            )
            try:
                step = parse_next_step(replies[0])
            except StepParseError as exc:
                return Rollout(tuple(steps), Rollout.STEP_LIMIT, diagnostic=str(exc))
            steps.append(step)
            if step.is_final:
                return Rollout(tuple(steps), Rollout.ANSWERED)
        return Rollout(tuple(steps), Rollout.STEP_LIMIT)


class CriticClient:
    """Critic backend over a hosted chat-completion endpoint (text only)."""

    def __init__(self, endpoint: PolicyEndpoint, session: Optional[requests.Session] = None):
        self._client = ChatCompletionClient(endpoint, session)
        self.endpoint = endpoint

    def judge(self, question: str, ground_truth: str, generated: str) -> Verdict:
        prompt = render_critic_prompt(question, ground_truth, generated)
        replies = self._client.complete(
            [{"role": "user", "content": prompt}], n=1, temperature=0.0
        )
        reply = replies[0]
        return Verdict(correct=parse_verdict_reply(reply), raw_reply=reply)


# ---------------------------------------------------------------------------
# Deterministic mock backends
# ---------------------------------------------------------------------------


def _final_answer_step(answer: str) -> ReasoningStep:
    text = f"### Final Answer: The answer is: $\\boxed{{{answer}}}$."
    return ReasoningStep(text=text, is_final=True, boxed_answer=answer)


class MockPolicyGateway:
    """Scripted policy whose behavior is a pure function of its spec.

    Every operation draws from ``random.Random`` seeded with
    ``(spec seed, operation, sample id, prefix length, draw index)``, so
    reruns and worker interleavings cannot change any output. A sample's
    rollout from a given prefix length solves with the sample's configured
    probability, producing the ground-truth boxed answer after
    ``steps_per_rollout`` total steps; otherwise it emits filler steps
    until the step limit.
    """

    def __init__(self, spec: MockPolicySpec):
        self.spec = spec

    def _p(self, sample: Sample) -> float:
        return self.spec.per_sample_solve_probability.get(
            sample.id, self.spec.default_solve_probability
        )

    def _rng(self, op: str, sample_id: str, prefix_len: int, draw: int = 0) -> random.Random:
        return random.Random(f"{self.spec.seed}/{op}/{sample_id}/{prefix_len}/{draw}")

    def _filler_step(self, sample_id: str, depth: int, rng: random.Random) -> ReasoningStep:
        token = rng.randrange(1_000_000)
        text = f"### Step{depth + 1}: examine aspect {token} of {sample_id}."
        return ReasoningStep(text=text, is_final=False, boxed_answer=None)

    def propose_steps(
        self,
        sample: Sample,
        prefix: Sequence[ReasoningStep],
        k: int,
        temperature: float,
    ) -> list[ReasoningStep]:
        if k < 1:
            raise ValueError("k must be >= 1")
        if any(step.is_final for step in prefix):
            raise ValueError("prefix must not contain a final step")
        depth = len(prefix)
        rng = self._rng("propose", sample.id, depth)
        can_finish = depth + 1 >= self.spec.steps_per_rollout
        candidates: list[ReasoningStep] = []
        for _ in range(k):
            if can_finish and rng.random() < self._p(sample):
                candidates.append(_final_answer_step(sample.answer))
            else:
                candidates.append(self._filler_step(sample.id, depth, rng))
            if temperature == 0.0 and candidates:
                # Greedy decoding: every sample collapses to the same text.
                candidates = [candidates[0]] * k
                break
        return dedupe_steps(candidates)

    def complete_rollout(
        self,
        sample: Sample,
        prefix: Sequence[ReasoningStep],
        step_limit: int,
        draw: int = 0,
    ) -> Rollout:
        if step_limit < 1:
            raise ValueError("step_limit must be >= 1")
        steps = list(prefix)
        rng = self._rng("rollout", sample.id, len(prefix), draw)
        solved = rng.random() < self._p(sample)
        if solved:
            needed = max(1, self.spec.steps_per_rollout - len(prefix))
            if needed <= step_limit:
                for _ in range(needed - 1):
                    steps.append(self._filler_step(sample.id, len(steps), rng))
                steps.append(_final_answer_step(sample.answer))
                return Rollout(tuple(steps), Rollout.ANSWERED)
        for _ in range(step_limit):
            steps.append(self._filler_step(sample.id, len(steps), rng))
        return Rollout(tuple(steps), Rollout.STEP_LIMIT)


class MockCriticGateway:
    """Exact-match critic: compares the boxed answer against ground truth.

    It emits a one-sentence reply in the judging format and routes it back
    through the real keyword parser, so tests exercise the same parse path
    as the HTTP backend.
    """

    def judge(self, question: str, ground_truth: str, generated: str) -> Verdict:
        del question
        boxed = extract_boxed_answer(generated)
        ok = boxed is not None and boxed.strip() == ground_truth.strip()
        reply = f"the generated answer is {'true' if ok else 'false'}"
        return Verdict(correct=parse_verdict_reply(reply), raw_reply=reply)


class ScriptedGateway:
    """Canned-reply policy backend for unit tests.

    ``replies`` maps an operation key to a list of raw reply strings; each
    call consumes parsing exactly like the HTTP backend does.
    """

    def __init__(self, propose_replies=None, rollout_replies=None):
        self.propose_replies = list(propose_replies or [])
        self.rollout_replies = list(rollout_replies or [])

    def propose_steps(self, sample, prefix, k, temperature):
        replies = self.propose_replies.pop(0) if self.propose_replies else []
        candidates = []
        for reply in replies[:k]:
            try:
                candidates.append(parse_next_step(reply))
            except StepParseError:
                continue
        return dedupe_steps(candidates)

    def complete_rollout(self, sample, prefix, step_limit, draw=0):
        steps = list(prefix)
        for _ in range(step_limit):
            if not self.rollout_replies:
                return Rollout(tuple(steps), Rollout.STEP_LIMIT, diagnostic="script exhausted")
            try:
                step = parse_next_step(self.rollout_replies.pop(0))
            except StepParseError as exc:
                return Rollout(tuple(steps), Rollout.STEP_LIMIT, diagnostic=str(exc))
            steps.append(step)
            if step.is_final:
                return Rollout(tuple(steps), Rollout.ANSWERED)
        return Rollout(tuple(steps), Rollout.STEP_LIMIT)
