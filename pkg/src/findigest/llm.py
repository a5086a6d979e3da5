"""Text-completion providers: a Gemini-compatible REST client and an offline mock."""

from __future__ import annotations

import json
import logging
import os
import random
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol

from .extractive import split_sentences
from .prompts import DEFAULT_INSTRUCTIONS, MERGE_INSTRUCTION, SectionKind
from .transport import (
    RequestsTransport,
    RetryExhausted,
    RetryPolicy,
    Transport,
    send_with_retry,
)

logger = logging.getLogger(__name__)

API_KEY_ENV = "GEMINI_API_KEY"
DEFAULT_BASE_URL = "https://generativelanguage.googleapis.com"
DEFAULT_MODEL = "gemini-1.5-pro"
DEFAULT_TEMPERATURE = 0.3
DEFAULT_MAX_OUTPUT_TOKENS = 4096
MAX_CONCURRENT_COMPLETIONS = 4


class ErrorCategory(str, Enum):
    AUTH = "Auth"
    RATE_LIMIT = "RateLimit"
    TRANSPORT = "Transport"
    SAFETY = "Safety"
    MALFORMED = "Malformed"


_RETRYABLE = {ErrorCategory.RATE_LIMIT, ErrorCategory.TRANSPORT}


class ProviderError(Exception):
    def __init__(self, category: ErrorCategory, detail: str, attempts: int = 1) -> None:
        super().__init__(f"{category.value}: {detail}")
        self.category = category
        self.detail = detail
        self.attempts = attempts

    @property
    def retryable(self) -> bool:
        return self.category in _RETRYABLE


@dataclass(frozen=True)
class CompletionRequest:
    prompt_text: str
    model_name: str = DEFAULT_MODEL
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        if not self.prompt_text:
            raise ValueError("prompt_text must be non-empty")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must be in [0, 2]")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    provider_latency_ms: int
    attempts: int


class Provider(Protocol):
    name: str

    def complete(self, request: CompletionRequest) -> CompletionResult: ...


class GeminiProvider:
    """``POST <base>/v1beta/models/<model>:generateContent`` with the key in ``x-goog-api-key``."""

    name = "live"

    def __init__(
        self,
        api_key: str | None = None,
        *,
        base_url: str = DEFAULT_BASE_URL,
        transport: Transport | None = None,
        retry: RetryPolicy | None = None,
        rng: random.Random | None = None,
        sleep: Callable[[float], None] = time.sleep,
        timeout: float = 120.0,
    ) -> None:
        api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not api_key:
            raise ProviderError(ErrorCategory.AUTH, f"{API_KEY_ENV} is not set")
        self.api_key = api_key
        self.base_url = base_url.rstrip("/")
        self.transport = transport or RequestsTransport()
        self.retry = retry or RetryPolicy()
        self.rng = rng or random.Random()
        self.sleep = sleep
        self.timeout = timeout

    def endpoint(self, model: str) -> str:
        return f"{self.base_url}/v1beta/models/{model}:generateContent"

    @staticmethod
    def request_body(request: CompletionRequest) -> dict:
        return {
            "contents": [{"role": "user", "parts": [{"text": request.prompt_text}]}],
            "generationConfig": {
                "temperature": request.temperature,
                "maxOutputTokens": request.max_output_tokens,
            },
        }

    def complete(self, request: CompletionRequest) -> CompletionResult:
        url = self.endpoint(request.model_name)
        headers = {"Content-Type": "application/json", "x-goog-api-key": self.api_key}
        started = time.monotonic()
        try:
            resp, attempts = send_with_retry(
                self.transport, "POST", url,
                policy=self.retry, rng=self.rng, sleep=self.sleep,
                headers=headers, body=json.dumps(self.request_body(request)), timeout=self.timeout,
            )
        except RetryExhausted as exc:
            raise ProviderError(ErrorCategory.TRANSPORT, str(exc.cause), exc.attempts) from exc
        latency_ms = int((time.monotonic() - started) * 1000)

        if resp.status in (401, 403):
            raise ProviderError(ErrorCategory.AUTH, f"HTTP {resp.status}", attempts)
        if resp.status == 429:
            raise ProviderError(ErrorCategory.RATE_LIMIT, "HTTP 429, retries exhausted", attempts)
        if resp.status >= 500:
            raise ProviderError(ErrorCategory.TRANSPORT, f"HTTP {resp.status}, retries exhausted", attempts)
        if resp.status != 200:
            raise ProviderError(ErrorCategory.MALFORMED, f"HTTP {resp.status}: {resp.body[:200]}", attempts)
        return CompletionResult(self._extract_text(resp.body, attempts), latency_ms, attempts)

    @staticmethod
    def _extract_text(body: str, attempts: int) -> str:
        try:
            data = json.loads(body)
        except ValueError as exc:
            raise ProviderError(ErrorCategory.MALFORMED, f"response is not JSON: {exc}", attempts) from exc
        if not isinstance(data, dict):
            raise ProviderError(ErrorCategory.MALFORMED, "response is not an object", attempts)
        block = (data.get("promptFeedback") or {}).get("blockReason")
        if block:
            raise ProviderError(ErrorCategory.SAFETY, f"prompt blocked: {block}", attempts)
        candidates = data.get("candidates") or []
        if not candidates:
            raise ProviderError(ErrorCategory.MALFORMED, "no candidates in response", attempts)
        first = candidates[0]
        if first.get("finishReason") == "SAFETY":
            raise ProviderError(ErrorCategory.SAFETY, "candidate stopped for safety", attempts)
        parts = (first.get("content") or {}).get("parts") or []
        text = "".join(p.get("text", "") for p in parts if isinstance(p, dict))
        if not text.strip():
            raise ProviderError(ErrorCategory.MALFORMED, "candidate has no text", attempts)
        return text


def _find_json_object(text: str, required_key: str) -> dict | None:
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except ValueError:
            obj = None
        if isinstance(obj, dict) and required_key in obj:
            return obj
        pos = text.find("{", pos + 1)
    return None


def _opening(text: str, words: int = 6) -> str:
    return " ".join(text.split()[:words])


class MockProvider:
    """Deterministic offline provider.

    Section prompts yield ``[MOCK <kind>] n=<articles>`` followed by the first
    sentence of each abstract, one per line. Merge prompts yield
    ``[MOCK <kind>] merged=<parts>`` followed by the partial answers.
    """

    name = "mock"

    def __init__(self, instructions: dict[SectionKind, str] | None = None) -> None:
        self._openings = [(_opening(text), kind) for kind, text in (instructions or DEFAULT_INSTRUCTIONS).items()]
        self.requests: list[CompletionRequest] = []

    def detect_kind(self, prompt: str) -> str:
        head = _opening(prompt)
        for opening, kind in self._openings:
            if head.startswith(opening):
                return kind.value
        return "UNKNOWN"

    def complete(self, request: CompletionRequest) -> CompletionResult:
        self.requests.append(request)
        prompt = request.prompt_text
        if prompt.startswith(MERGE_INSTRUCTION):
            data = _find_json_object(prompt, "partials")
            if data is None:
                raise ProviderError(ErrorCategory.MALFORMED, "merge prompt has no partials JSON")
            lines = [f"[MOCK {data.get('section', 'UNKNOWN')}] merged={len(data['partials'])}"]
            lines += [str(p) for p in data["partials"]]
            return CompletionResult("\n".join(lines), 0, 1)

        data = _find_json_object(prompt, "articles")
        if data is None or not isinstance(data["articles"], list):
            raise ProviderError(ErrorCategory.MALFORMED, "no payload JSON found in prompt")
        articles = data["articles"]
        lines = [f"[MOCK {self.detect_kind(prompt)}] n={len(articles)}"]
        for art in articles:
            sentences = split_sentences(str(art.get("abstract") or ""))
            lines.append(sentences[0] if sentences else "")
        return CompletionResult("\n".join(lines), 0, 1)

