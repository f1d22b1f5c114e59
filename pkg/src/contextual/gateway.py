"""Completion backends and timed generation.

Two families of backend share one ``complete(prompt, cfg)`` method: an
OpenAI-compatible chat-completions client over HTTP, and in-process mocks
used for hermetic runs.
"""

from __future__ import annotations

import collections
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass

import httpx

from .corpus import count_tokens, detokenize, split_tokens
from .errors import (
    BackendTimeout,
    BackendUnreachable,
    ConfigError,
    HttpStatus,
    MalformedResponse,
    RateLimited,
    ScriptExhausted,
    UnparseableJudgeOutput,
)
from .prompts import final_input_section

log = logging.getLogger(__name__)

DEFAULT_API_BASE = "http://localhost:8000"


@dataclass(frozen=True)
class GenerationConfig:
    max_tokens: int = 200
    temperature: float = 0.7
    model_name: str = "mock"
    seed: int | None = None

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int
    completion_tokens: int
    retry_count: int = 0


@dataclass
class SummaryRecord:
    note_id: str
    prompt: str
    summary_text: str
    latency_seconds: float
    prompt_tokens: int
    completion_tokens: int
    retry_count: int = 0
    empty: bool = False


@dataclass(frozen=True)
class JudgeScores:
    main_ideas: int
    coherence: int
    factuality: int

    @property
    def average(self) -> float:
        return (self.main_ideas + self.coherence + self.factuality) / 3.0

    def to_json(self) -> dict:
        return {**asdict(self), "average": self.average}


# -- mock backends ------------------------------------------------------------

class MockBackend:
    """Deterministic in-process backend.

    ``extractive`` returns the first ``max_tokens`` tokens of the prompt's final
    Input section; ``fixed`` always returns ``text``; ``scripted`` pops canned
    responses in order. ``delay`` and ``delay_per_token`` (per prompt token)
    inject synthetic latency.
    """

    kinds = ("extractive", "fixed", "scripted")

    def __init__(self, kind: str, text: str = "", script=(), delay: float = 0.0,
                 delay_per_token: float = 0.0):
        if kind not in self.kinds:
            raise ConfigError(f"unknown mock kind {kind!r}")
        self.kind = kind
        self.text = text
        self.delay = delay
        self.delay_per_token = delay_per_token
        self._script = collections.deque(script)
        self._lock = threading.Lock()

    def complete(self, prompt: str, cfg: GenerationConfig) -> Completion:
        prompt_tokens = count_tokens(prompt)
        pause = self.delay + self.delay_per_token * prompt_tokens
        if pause > 0:
            time.sleep(pause)
        if self.kind == "extractive":
            text = detokenize(split_tokens(final_input_section(prompt))[:cfg.max_tokens])
        elif self.kind == "fixed":
            text = self.text
        else:
            with self._lock:
                if not self._script:
                    raise ScriptExhausted("scripted mock has no responses left")
                text = self._script.popleft()
        return Completion(text, prompt_tokens, count_tokens(text))


def make_mock(kind: str, **params) -> MockBackend:
    return MockBackend(kind, **params)


# -- HTTP backend -----------------------------------------------------------------

class HttpBackend:
    """OpenAI-compatible ``/v1/chat/completions`` client.

    Connection errors, timeouts, 429 and 5xx are retried up to ``max_retries``
    times with exponential backoff (``backoff * 2**attempt`` seconds). Any other
    4xx is raised at once.
    """

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 timeout: float = 60.0, max_retries: int = 3, backoff: float = 0.5,
                 sleep=time.sleep, client: httpx.Client | None = None):
        self.base_url = (base_url or os.environ.get("CONTEXTUAL_API_BASE") or DEFAULT_API_BASE).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("CONTEXTUAL_API_KEY", "")
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout)

    @property
    def url(self) -> str:
        return f"{self.base_url}/v1/chat/completions"

    def request_body(self, prompt: str, cfg: GenerationConfig) -> dict:
        return {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": cfg.max_tokens,
            "temperature": cfg.temperature,
        }

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _attempt(self, body: dict) -> dict:
        try:
            resp = self._client.post(self.url, json=body, headers=self._headers())
        except httpx.TimeoutException as exc:
            raise BackendTimeout(str(exc)) from exc
        except httpx.TransportError as exc:
            raise BackendUnreachable(f"{self.url}: {exc}") from exc
        if resp.status_code == 429:
            raise RateLimited(resp.text)
        if resp.status_code >= 400:
            raise HttpStatus(resp.status_code, resp.text)
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"response is not JSON: {resp.text[:200]!r}") from exc

    @staticmethod
    def _transient(exc: Exception) -> bool:
        if isinstance(exc, (BackendTimeout, BackendUnreachable, RateLimited)):
            return True
        return isinstance(exc, HttpStatus) and exc.code >= 500

    def complete(self, prompt: str, cfg: GenerationConfig) -> Completion:
        body = self.request_body(prompt, cfg)
        retries = 0
        while True:
            try:
                doc = self._attempt(body)
                break
            except (BackendTimeout, BackendUnreachable, HttpStatus) as exc:
                if not self._transient(exc) or retries >= self.max_retries:
                    raise
                wait = self.backoff * (2 ** retries)
                log.warning("transient backend failure (%s); retry %d in %.2fs", exc, retries + 1, wait)
                self._sleep(wait)
                retries += 1
        try:
            text = doc["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"no choices[0].message.content in {str(doc)[:200]}") from exc
        if text is None:
            text = ""
        if not isinstance(text, str):
            raise MalformedResponse("message content is not a string")
        usage = doc.get("usage") or {}
        return Completion(
            text,
            int(usage.get("prompt_tokens", count_tokens(prompt))),
            int(usage.get("completion_tokens", count_tokens(text))),
            retries,
        )

    def close(self):
        self._client.close()


# -- operations -------------------------------------------------------------------

def generate(prompt: str, cfg: GenerationConfig, backend, note_id: str = "") -> SummaryRecord:
    start = time.perf_counter()
    result = backend.complete(prompt, cfg)
    latency = time.perf_counter() - start
    return SummaryRecord(
        note_id=note_id,
        prompt=prompt,
        summary_text=result.text,
        latency_seconds=latency,
        prompt_tokens=result.prompt_tokens,
        completion_tokens=result.completion_tokens,
        retry_count=result.retry_count,
        empty=not result.text.strip(),
    )


JUDGE_TEMPLATE = """You are grading a clinical summary against a reference summary.
Rate the candidate on each criterion from 1 (poor) to 5 (excellent):
- Main Ideas: does it retain the main ideas of the reference?
- Coherence: is it well organized and logically consistent?
- Factuality: is every statement supported by the reference?

Reference:
{reference}

Candidate:
{candidate}

Answer with exactly three lines:
main_ideas: <1-5>
coherence: <1-5>
factuality: <1-5>
"""

_LABELLED = {
    "main_ideas": re.compile(r"main[\s_-]*idea\w*(?:\s+retention)?\W{0,6}?([1-5])\b|main\W{1,6}([1-5])\b", re.I),
    "coherence": re.compile(r"coheren\w*\W{0,6}?([1-5])\b", re.I),
    "factuality": re.compile(r"factu\w*(?:\s+consistency)?\W{0,6}?([1-5])\b", re.I),
}
_BARE_SCORE = re.compile(r"(?<![\d.])([1-5])(?![\d.])")


def parse_judge_output(raw: str) -> JudgeScores:
    labelled = {}
    for name, pattern in _LABELLED.items():
        m = pattern.search(raw)
        if m:
            labelled[name] = int(next(g for g in m.groups() if g))
    if len(labelled) == 3:
        return JudgeScores(**labelled)
    bare = [int(d) for d in _BARE_SCORE.findall(raw)]
    if len(bare) >= 3:
        return JudgeScores(*bare[:3])
    raise UnparseableJudgeOutput(raw)


def judge(reference: str, candidate: str, cfg: GenerationConfig, backend) -> JudgeScores:
    if not reference.strip() or not candidate.strip():
        raise ValueError("judge needs non-empty reference and candidate")
    prompt = JUDGE_TEMPLATE.format(reference=reference, candidate=candidate)
    return parse_judge_output(backend.complete(prompt, cfg).text)
