"""Token-budgeted JSON payloads for LLM requests."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

from .store import CorpusEntry

DEFAULT_MAX_TOKENS = 30_000
DEFAULT_CHARS_PER_TOKEN = 4


class OversizedArticle(ValueError):
    def __init__(self, article_id: str, estimate: int, budget: int) -> None:
        super().__init__(f"article {article_id} alone needs ~{estimate} tokens, budget is {budget}")
        self.article_id = article_id
        self.estimate = estimate
        self.budget = budget


@dataclass(frozen=True)
class TokenBudget:
    max_tokens_per_request: int = DEFAULT_MAX_TOKENS
    chars_per_token: float | Fraction = DEFAULT_CHARS_PER_TOKEN

    def __post_init__(self) -> None:
        if self.max_tokens_per_request < 1:
            raise ValueError("max_tokens_per_request must be >= 1")
        if self.chars_per_token <= 0:
            raise ValueError("chars_per_token must be > 0")


@dataclass(frozen=True)
class Article:
    id: str
    title: str
    doi: str | None
    abstract: str

    @classmethod
    def from_entry(cls, entry: CorpusEntry) -> "Article":
        r = entry.record
        return cls(r.id, r.title, r.doi, r.abstract_text)


@dataclass(frozen=True)
class DigestPayload:
    period_label: str
    articles: tuple[Article, ...]
    estimated_tokens: int
    chunk_index: int = 0
    chunk_total: int = 1

    def __post_init__(self) -> None:
        if not 0 <= self.chunk_index < self.chunk_total:
            raise ValueError("chunk_index must be in [0, chunk_total)")


def _tokens_for(chars: int, budget: TokenBudget) -> int:
    # Fraction keeps the ceiling exact for float ratios.
    return math.ceil(Fraction(chars) / Fraction(budget.chars_per_token))


def estimate_tokens(text: str, budget: TokenBudget) -> int:
    return _tokens_for(len(text), budget)  # len() counts code points


def _article_json(a: Article) -> str:
    return json.dumps(
        {"id": a.id, "title": a.title, "doi": a.doi, "abstract": a.abstract},
        ensure_ascii=False,
        separators=(",", ":"),
    )


def _envelope(period: str, chunk: int, total: int) -> tuple[str, str]:
    head = json.dumps(
        {"period": period, "chunk": chunk, "chunk_total": total},
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return head[:-1] + ',"articles":[', "]}"


def serialize_payload(p: DigestPayload) -> str:
    head, tail = _envelope(p.period_label, p.chunk_index, p.chunk_total)
    return head + ",".join(_article_json(a) for a in p.articles) + tail


def build_payloads(
    entries: Sequence[CorpusEntry],
    budget: TokenBudget,
    period_label: str,
) -> list[DigestPayload]:
    """Greedily pack articles, in order, into chunks whose serialized size fits the budget.

    An empty input yields a single empty chunk so every section still gets
    one request.
    """
    articles = [Article.from_entry(e) for e in entries]
    # Size the envelope with a placeholder at least as wide as any real
    # chunk number; the final (narrower) numbers can only shrink the estimate.
    placeholder = max(1, len(articles))
    head, tail = _envelope(period_label, placeholder, placeholder)
    envelope_chars = len(head) + len(tail)
    limit = budget.max_tokens_per_request

    def fits(chars: int) -> bool:
        return _tokens_for(chars, budget) <= limit

    chunks: list[list[Article]] = [[]]
    running = envelope_chars
    for a in articles:
        size = len(_article_json(a))
        if not fits(envelope_chars + size):
            raise OversizedArticle(a.id, _tokens_for(envelope_chars + size, budget), limit)
        extra = size + (1 if chunks[-1] else 0)  # separating comma
        if chunks[-1] and not fits(running + extra):
            chunks.append([])
            running = envelope_chars
            extra = size
        chunks[-1].append(a)
        running += extra

    total = len(chunks)
    out = []
    for i, group in enumerate(chunks):
        p = DigestPayload(period_label, tuple(group), 0, i, total)
        p = replace(p, estimated_tokens=estimate_tokens(serialize_payload(p), budget))
        assert p.estimated_tokens <= limit, "chunk exceeds budget"
        out.append(p)
    return out
