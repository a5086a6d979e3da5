"""HTTP plumbing shared by the OpenAlex and LLM clients.

Transports are plain callables so tests can swap the network for recorded
exchanges. Retry and rate limiting live here rather than in each client.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import requests

logger = logging.getLogger(__name__)


class TransportFailure(Exception):
    """The request never produced an HTTP response (DNS, refused, reset...)."""


class TransportTimeout(TransportFailure):
    pass


@dataclass
class Response:
    status: int
    body: str
    headers: dict[str, str] = field(default_factory=dict)

    def json(self) -> Any:
        return json.loads(self.body)


class Transport(Protocol):
    def __call__(
        self,
        method: str,
        url: str,
        *,
        headers: dict[str, str] | None = None,
        body: str | None = None,
        timeout: float | None = None,
    ) -> Response: ...


class RequestsTransport:
    """Live transport backed by ``requests``."""

    def __init__(self, default_timeout: float = 30.0) -> None:
        self.default_timeout = default_timeout

    def __call__(self, method, url, *, headers=None, body=None, timeout=None) -> Response:
        try:
            resp = requests.request(
                method,
                url,
                headers=headers,
                data=body.encode("utf-8") if body is not None else None,
                timeout=timeout or self.default_timeout,
            )
        except requests.Timeout as exc:
            raise TransportTimeout(str(exc)) from exc
        except requests.RequestException as exc:
            raise TransportFailure(str(exc)) from exc
        return Response(resp.status_code, resp.text, dict(resp.headers))


class ReplayTransport:
    """Serves recorded ``{url, status, body}`` exchanges.

    Exchanges for the same URL are served in recorded order; the last one
    keeps being replayed once the queue is drained, so a single recorded
    429 behaves like a persistently throttled endpoint. Unknown URLs raise
    :class:`TransportFailure`.
    """

    def __init__(self, exchanges: list[dict[str, Any]]) -> None:
        self._queues: dict[str, deque] = defaultdict(deque)
        for ex in exchanges:
            self._queues[ex["url"]].append(ex)
        self._lock = threading.Lock()
        self.calls: list[tuple[float, str, str]] = []

    @classmethod
    def from_path(cls, path: str | Path) -> "ReplayTransport":
        path = Path(path)
        files = sorted(path.glob("*.json")) if path.is_dir() else [path]
        exchanges: list[dict[str, Any]] = []
        for f in files:
            data = json.loads(f.read_text(encoding="utf-8"))
            exchanges.extend(data if isinstance(data, list) else [data])
        return cls(exchanges)

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def __call__(self, method, url, *, headers=None, body=None, timeout=None) -> Response:
        with self._lock:
            self.calls.append((time.monotonic(), method, url))
            queue = self._queues.get(url)
            if not queue:
                raise TransportFailure(f"no recorded exchange for {method} {url}")
            ex = queue.popleft() if len(queue) > 1 else queue[0]
        if ex.get("timeout"):
            raise TransportTimeout(f"recorded timeout for {url}")
        raw = ex.get("body", "")
        text = raw if isinstance(raw, str) else json.dumps(raw)
        return Response(int(ex["status"]), text, dict(ex.get("headers") or {}))


class TokenBucket:
    """Blocking token bucket shared by every request of a client.

    With the default capacity of one token there is no burst, so ``n``
    acquisitions always span at least ``(n - 1) / rate`` seconds.
    """

    def __init__(
        self,
        rate: float,
        capacity: float = 1.0,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate <= 0:
            raise ValueError("rate must be positive")
        if capacity < 1:
            raise ValueError("capacity must be at least one token")
        self.rate = rate
        self.capacity = capacity
        self._clock = clock
        self._sleep = sleep
        self._tokens = capacity
        self._updated = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        # Holding the lock while sleeping serializes waiters, which is the point.
        with self._lock:
            now = self._clock()
            self._tokens = min(self.capacity, self._tokens + (now - self._updated) * self.rate)
            self._updated = now
            if self._tokens < 1:
                wait = (1 - self._tokens) / self.rate
                self._sleep(wait)
                self._tokens = 1.0
                self._updated += wait
            self._tokens -= 1


def is_retryable_status(status: int) -> bool:
    return status == 429 or 500 <= status <= 599


@dataclass
class RetryPolicy:
    """Exponential backoff: base, 2*base, 4*base... each scaled by 1 +/- jitter."""

    max_attempts: int = 3
    base_delay: float = 1.0
    jitter: float = 0.2

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must be in [0, 1)")

    def delay(self, retry_number: int, rng: random.Random) -> float:
        """Delay before retry ``retry_number`` (1 for the first retry)."""
        nominal = self.base_delay * 2 ** (retry_number - 1)
        return nominal * rng.uniform(1 - self.jitter, 1 + self.jitter)


class RetryExhausted(Exception):
    """Raised when the last attempt ended in a transport exception."""

    def __init__(self, cause: TransportFailure, attempts: int) -> None:
        super().__init__(f"{cause} (after {attempts} attempts)")
        self.cause = cause
        self.attempts = attempts


def send_with_retry(
    transport: Transport,
    method: str,
    url: str,
    *,
    policy: RetryPolicy,
    rng: random.Random,
    limiter: TokenBucket | None = None,
    sleep: Callable[[float], None] = time.sleep,
    headers: dict[str, str] | None = None,
    body: str | None = None,
    timeout: float | None = None,
) -> tuple[Response, int]:
    """Send a request, retrying 429/5xx responses and transport failures.

    Returns the final response together with the number of attempts made.
    A non-retryable status returns immediately. When attempts run out on a
    retryable status that response is returned for the caller to classify;
    when they run out on a transport exception, :class:`RetryExhausted` is
    raised.
    """
    attempt = 0
    while True:
        attempt += 1
        if limiter is not None:
            limiter.acquire()
        try:
            resp = transport(method, url, headers=headers, body=body, timeout=timeout)
        except TransportFailure as exc:
            if attempt >= policy.max_attempts:
                raise RetryExhausted(exc, attempt) from exc
            logger.warning("attempt %d for %s failed: %s", attempt, url, exc)
        else:
            if not is_retryable_status(resp.status) or attempt >= policy.max_attempts:
                return resp, attempt
            logger.warning("attempt %d for %s got HTTP %d", attempt, url, resp.status)
        sleep(policy.delay(attempt, rng))
