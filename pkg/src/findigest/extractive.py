"""Frequency + position extractive summarizer.

Offline stand-in for the LLM sections and a grounding baseline. Scores are
exact :class:`fractions.Fraction` values so ties are decided exactly.

Known limitation: the splitter only breaks when the next word is
capitalized, so "e.g. Foo" splits and "Approx. value" does not.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

DEFAULT_STOPWORDS = frozenset(
    """
    a an the and or but if of at by for with about against between into through
    during before after above below to from up down in out on off over under
    is are was were be been being have has had do does did this that these those
    it its as such than too very can will just not no nor so
    """.split()
)

_BOUNDARY = re.compile(r"[.!?]\s+")
_TOKEN = re.compile(r"[^\W_]+")


class EmptyDocument(ValueError):
    pass


@dataclass
class SummaryConfig:
    top_k: int = 5
    stopwords: frozenset[str] = field(default_factory=lambda: DEFAULT_STOPWORDS)
    position_bonus: Fraction | float = Fraction(1, 10)

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.position_bonus < 0:
            raise ValueError("position_bonus must be >= 0")
        self.stopwords = frozenset(w.lower() for w in self.stopwords)


@dataclass(frozen=True)
class SentenceScore:
    sentence_index: int
    sentence_text: str
    score: Fraction


def load_stopwords(path: str | Path) -> frozenset[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return frozenset(w.strip().lower() for w in lines if w.strip())


def split_sentences(text: str) -> list[str]:
    sentences = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        if m.end() < len(text) and text[m.end()].isupper():
            sentences.append(text[start:m.start() + 1])
            start = m.end()
    sentences.append(text[start:])
    return [s.strip() for s in sentences if s.strip()]


def tokenize(sentence: str) -> list[str]:
    return _TOKEN.findall(sentence.lower())


def _as_fraction(x: Fraction | float) -> Fraction:
    # Via str so 0.1 means one tenth, not its binary approximation.
    return x if isinstance(x, Fraction) else Fraction(str(x))


def score_sentences(sentences: list[str], config: SummaryConfig) -> list[SentenceScore]:
    """Mean normalized term frequency of each sentence, plus a bonus for the first one.

    Frequencies count non-stopword occurrences over the whole document and
    are divided by the largest one. The mean runs over every token in the
    sentence, stopwords included, so long sentences gain nothing by length.
    """
    if not sentences:
        raise EmptyDocument("no sentences to score")
    tokenized = [tokenize(s) for s in sentences]
    freq = Counter(t for toks in tokenized for t in toks if t not in config.stopwords)
    peak = max(freq.values(), default=0)
    bonus = _as_fraction(config.position_bonus)
    scores = []
    for i, (text, toks) in enumerate(zip(sentences, tokenized)):
        score = Fraction(0)
        if toks and peak:
            score = sum((Fraction(freq[t], peak) for t in toks if t not in config.stopwords), Fraction(0)) / len(toks)
        if i == 0:
            score += bonus
        scores.append(SentenceScore(i, text, score))
    return scores


def extract_summary(text: str, config: SummaryConfig | None = None) -> str:
    config = config or SummaryConfig()
    sentences = split_sentences(text)
    if not sentences:
        return ""
    if len(sentences) <= config.top_k:
        return " ".join(text.split())
    scored = score_sentences(sentences, config)
    best = sorted(scored, key=lambda s: (-s.score, s.sentence_index))[: config.top_k]
    return " ".join(s.sentence_text for s in sorted(best, key=lambda s: s.sentence_index))
