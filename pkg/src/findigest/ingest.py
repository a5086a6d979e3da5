"""OpenAlex harvesting: monthly windows, query URLs, pagination, normalization."""

from __future__ import annotations

import calendar
import logging
import random
import re
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Any, Callable, Mapping
from urllib.parse import quote

from .transport import (
    RequestsTransport,
    RetryExhausted,
    RetryPolicy,
    TokenBucket,
    Transport,
    TransportTimeout,
    send_with_retry,
)

logger = logging.getLogger(__name__)

DEFAULT_WORKS_URL = "https://api.openalex.org/works"
DEFAULT_CONCEPTS_URL = "https://api.openalex.org/concepts"
DEFAULT_LAG_DAYS = 21
MAX_PER_PAGE = 200

_CONCEPT_RE = re.compile(r"[A-Za-z0-9]+")
_DOI_PREFIXES = ("https://doi.org/", "http://doi.org/", "https://dx.doi.org/", "doi:")


class IngestError(Exception):
    """Base class for harvesting failures. ``page_index`` is set by fetch_all."""

    page_index: int | None = None


class AuthError(IngestError):
    pass


class RateLimitExhausted(IngestError):
    pass


class TransportError(IngestError):
    pass


class MalformedResponse(IngestError):
    pass


def _last_day(year: int, month: int) -> date:
    return date(year, month, calendar.monthrange(year, month)[1])


@dataclass(frozen=True, order=True)
class DateWindow:
    start: date
    end: date

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"window start {self.start} after end {self.end}")
        if self.start.day != 1 or self.end != _last_day(self.start.year, self.start.month):
            raise ValueError(f"{self.start}..{self.end} is not a single calendar month")

    @classmethod
    def for_month(cls, year: int, month: int) -> "DateWindow":
        return cls(date(year, month, 1), _last_day(year, month))

    @classmethod
    def parse_label(cls, label: str) -> "DateWindow":
        """Parse ``YYYY-MM``."""
        m = re.fullmatch(r"(\d{4})-(\d{2})", label.strip())
        if not m:
            raise ValueError(f"expected YYYY-MM, got {label!r}")
        return cls.for_month(int(m.group(1)), int(m.group(2)))

    @property
    def label(self) -> str:
        return f"{self.start.year:04d}-{self.start.month:02d}"

    def __contains__(self, day: date) -> bool:
        return self.start <= day <= self.end

    def __str__(self) -> str:
        return f"{self.start.isoformat()}..{self.end.isoformat()}"


def compute_window(run_date: date, lag_days: int = DEFAULT_LAG_DAYS) -> DateWindow:
    """Latest full calendar month whose last day plus ``lag_days`` is <= run_date."""
    if lag_days < 1:
        raise ValueError("lag_days must be >= 1")
    cutoff = run_date - timedelta(days=lag_days)
    if cutoff == _last_day(cutoff.year, cutoff.month):
        return DateWindow.for_month(cutoff.year, cutoff.month)
    prev = cutoff.replace(day=1) - timedelta(days=1)
    return DateWindow.for_month(prev.year, prev.month)


@dataclass(frozen=True)
class WorkQuery:
    window: DateWindow
    concept_id: str
    per_page: int = MAX_PER_PAGE
    cursor: str = "*"
    contact_email: str | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.per_page <= MAX_PER_PAGE:
            raise ValueError(f"per_page must be in [1, {MAX_PER_PAGE}]")
        if not self.cursor:
            raise ValueError("cursor must not be empty; use '*' for the first page")


def build_query_url(query: WorkQuery, base_url: str = DEFAULT_WORKS_URL) -> str:
    if not _CONCEPT_RE.fullmatch(query.concept_id):
        raise ValueError(f"concept id must be alphanumeric, got {query.concept_id!r}")
    w = query.window
    filt = (
        f"from_publication_date:{w.start.isoformat()},"
        f"to_publication_date:{w.end.isoformat()},"
        f"concepts.id:{query.concept_id}"
    )
    url = f"{base_url}?filter={filt}&per-page={query.per_page}&cursor={quote(query.cursor, safe='*=')}"
    if query.contact_email:
        url += f"&mailto={quote(query.contact_email, safe='@+')}"
    return url


def reconstruct_abstract(inv: Mapping[str, list[int]] | None) -> str:
    """Rebuild linear text from an OpenAlex ``abstract_inverted_index``.

    Gaps in positions are skipped. When two tokens claim a position the one
    seen first in mapping order is kept and a warning is logged.
    """
    if not inv:
        return ""
    slots: dict[int, str] = {}
    for token, positions in inv.items():
        for pos in positions:
            if pos in slots:
                logger.warning(
                    "position %d claimed by %r and %r; keeping %r", pos, slots[pos], token, slots[pos]
                )
                continue
            slots[pos] = token
    return " ".join(slots[p] for p in sorted(slots))


def normalize_doi(raw: str | None) -> str | None:
    if not raw:
        return None
    doi = raw.strip()
    for prefix in _DOI_PREFIXES:
        if doi.lower().startswith(prefix):
            doi = doi[len(prefix):]
            break
    return doi or None


@dataclass
class WorkRecord:
    id: str
    doi: str | None
    title: str
    publication_date: date
    abstract_text: str
    concepts: list[str] = field(default_factory=list)
    fetched_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("work id must be non-empty")


def normalize_work(raw: Mapping[str, Any], fetched_at: datetime) -> WorkRecord:
    """Map one raw OpenAlex work object onto a WorkRecord."""
    try:
        work_id = raw["id"]
        pub = date.fromisoformat(raw["publication_date"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResponse(f"work missing id/publication_date: {exc}") from exc
    if not isinstance(work_id, str) or not work_id:
        raise MalformedResponse("work id must be a non-empty string")
    concepts = [c["id"] for c in raw.get("concepts") or [] if isinstance(c, dict) and c.get("id")]
    return WorkRecord(
        id=work_id,
        doi=normalize_doi(raw.get("doi")),
        title=(raw.get("title") or raw.get("display_name") or "").strip(),
        publication_date=pub,
        abstract_text=reconstruct_abstract(raw.get("abstract_inverted_index")),
        concepts=concepts,
        fetched_at=fetched_at,
    )


@dataclass
class FetchPage:
    records: list[WorkRecord]
    next_cursor: str | None
    total_count: int

    @property
    def is_last(self) -> bool:
        return self.next_cursor is None


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class OpenAlexClient:
    """Rate-limited, retrying client for the works (and concepts) endpoints.

    One client may serve several windows concurrently; every request goes
    through the same token bucket.
    """

    def __init__(
        self,
        transport: Transport | None = None,
        *,
        base_url: str = DEFAULT_WORKS_URL,
        concepts_url: str = DEFAULT_CONCEPTS_URL,
        per_page: int = MAX_PER_PAGE,
        contact_email: str | None = None,
        rate_limit_rps: float = 5.0,
        retry: RetryPolicy | None = None,
        rng: random.Random | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], datetime] = _utcnow,
        timeout: float = 30.0,
    ) -> None:
        self.transport = transport or RequestsTransport()
        self.base_url = base_url
        self.concepts_url = concepts_url
        self.per_page = per_page
        self.contact_email = contact_email
        self.limiter = TokenBucket(rate_limit_rps, sleep=sleep)
        self.retry = retry or RetryPolicy()
        self.rng = rng or random.Random()
        self.sleep = sleep
        self.clock = clock
        self.timeout = timeout

    def _get_json(self, url: str) -> Any:
        headers = {"Accept": "application/json"}
        try:
            resp, attempts = send_with_retry(
                self.transport, "GET", url,
                policy=self.retry, rng=self.rng, limiter=self.limiter,
                sleep=self.sleep, headers=headers, timeout=self.timeout,
            )
        except RetryExhausted as exc:
            kind = "timeout" if isinstance(exc.cause, TransportTimeout) else "network failure"
            raise TransportError(f"{kind} for {url} after {exc.attempts} attempts: {exc.cause}") from exc
        if resp.status in (401, 403):
            raise AuthError(f"HTTP {resp.status} for {url}")
        if resp.status == 429:
            raise RateLimitExhausted(f"HTTP 429 for {url} after {attempts} attempts")
        if resp.status >= 500:
            raise TransportError(f"HTTP {resp.status} for {url} after {attempts} attempts")
        if resp.status != 200:
            raise MalformedResponse(f"unexpected HTTP {resp.status} for {url}")
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"body of {url} is not JSON: {exc}") from exc

    def query(self, window: DateWindow, concept_id: str, cursor: str = "*") -> WorkQuery:
        return WorkQuery(window, concept_id, self.per_page, cursor, self.contact_email)

    def fetch_page(self, query: WorkQuery) -> FetchPage:
        data = self._get_json(build_query_url(query, self.base_url))
        if not isinstance(data, dict) or not isinstance(data.get("results"), list):
            raise MalformedResponse("response has no 'results' list")
        meta = data.get("meta") or {}
        fetched_at = self.clock()
        records = []
        for raw in data["results"]:
            if not isinstance(raw, dict):
                raise MalformedResponse("result entry is not an object")
            rec = normalize_work(raw, fetched_at)
            if rec.publication_date not in query.window:
                logger.warning("dropping %s: published %s outside %s", rec.id, rec.publication_date, query.window)
                continue
            records.append(rec)
        next_cursor = meta.get("next_cursor") or None
        # An empty page with a cursor would loop forever.
        if not data["results"]:
            next_cursor = None
        return FetchPage(records, next_cursor, int(meta.get("count") or 0))

    def fetch_all(self, window: DateWindow, concept_id: str) -> list[WorkRecord]:
        seen: set[str] = set()
        out: list[WorkRecord] = []
        cursor = "*"
        page_index = 0
        while True:
            try:
                page = self.fetch_page(self.query(window, concept_id, cursor))
            except IngestError as exc:
                exc.page_index = page_index
                exc.args = (f"page {page_index}: {exc}",)
                raise
            for rec in page.records:
                if rec.id in seen:
                    logger.info("duplicate work %s on page %d dropped", rec.id, page_index)
                    continue
                seen.add(rec.id)
                out.append(rec)
            if page.is_last:
                return out
            cursor = page.next_cursor
            page_index += 1

    def resolve_concept(self, name: str) -> tuple[str, str]:
        """Look up a concept by display name; returns (short id, display name).

        An exact case-insensitive display-name match wins, otherwise the top
        search hit is taken.
        """
        url = f"{self.concepts_url}?search={quote(name)}&per-page=25"
        if self.contact_email:
            url += f"&mailto={quote(self.contact_email, safe='@+')}"
        data = self._get_json(url)
        results = data.get("results") if isinstance(data, dict) else None
        if not results:
            raise MalformedResponse(f"no concept matches {name!r}")
        best = next(
            (r for r in results if (r.get("display_name") or "").casefold() == name.casefold()),
            results[0],
        )
        return best["id"].rsplit("/", 1)[-1], best.get("display_name") or ""
