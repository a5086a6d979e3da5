"""Regenerate the OpenAlex replay fixtures under tests/fixtures/openalex/.

Run from the repo root: ``python tests/fixtures/build_fixtures.py``.
Output is deterministic (seeded), so rerunning yields identical files.
"""

from __future__ import annotations

import json
import random
import shutil
from datetime import date, timedelta
from pathlib import Path

BASE = "https://api.openalex.org/works"
CONCEPT = "C10138342"
HERE = Path(__file__).parent / "openalex"

SUBJECTS = [
    "Emerging market equities", "Sovereign bond spreads", "Corporate credit risk",
    "Bank liquidity buffers", "Retail investor sentiment", "Green bond issuance",
    "Cryptocurrency volatility", "Monetary policy transmission", "Firm leverage",
    "Foreign exchange reserves", "Microfinance lending", "Pension fund allocation",
]
FINDINGS = [
    "respond asymmetrically to global liquidity shocks",
    "exhibit stronger momentum after earnings announcements",
    "are priced with a persistent climate risk premium",
    "depend on the depth of local capital markets",
    "amplify contagion during periods of financial stress",
    "improve when disclosure requirements are tightened",
]
METHODS = [
    "We use a panel of {n} firms observed between 2010 and 2023.",
    "Our identification relies on a difference-in-differences design around regulatory reforms.",
    "We estimate a dynamic factor model on daily returns from {n} securities.",
    "Using machine learning forecasts, we compare predictive accuracy across {n} portfolios.",
    "We collect hand-coded data on {n} policy announcements.",
]
RESULTS = [
    "The effect is economically large and survives standard robustness checks.",
    "Results are strongest for small and financially constrained firms.",
    "These patterns reverse when capital controls are relaxed.",
    "We find no evidence that the relationship is driven by reverse causality.",
    "A one standard deviation shock raises funding costs by {n} basis points.",
]
IMPLICATIONS = [
    "The findings matter for regulators designing macroprudential tools.",
    "Investors can exploit these dynamics in portfolio construction.",
    "Future work should examine the role of central bank digital currencies.",
    "Policy makers in emerging markets face a trade-off between growth and stability.",
]


def inverted_index(text: str) -> dict[str, list[int]]:
    inv: dict[str, list[int]] = {}
    for pos, tok in enumerate(text.split(" ")):
        inv.setdefault(tok, []).append(pos)
    return inv


def make_abstract(rng: random.Random) -> str:
    n = rng.randint(40, 3000)
    parts = [
        f"{rng.choice(SUBJECTS)} {rng.choice(FINDINGS)}.",
        rng.choice(METHODS).format(n=n),
        rng.choice(RESULTS).format(n=rng.randint(5, 90)),
        rng.choice(RESULTS).format(n=rng.randint(5, 90)),
        rng.choice(IMPLICATIONS),
    ]
    return " ".join(parts[: rng.randint(3, 5)])


def make_work(rng: random.Random, serial: int, pub: date) -> dict:
    subject = rng.choice(SUBJECTS)
    work = {
        "id": f"https://openalex.org/W{4000000000 + serial}",
        "doi": f"https://doi.org/10.5555/fin.2024.{serial:04d}",
        "title": f"{subject}: evidence from study {serial}",
        "display_name": f"{subject}: evidence from study {serial}",
        "publication_date": pub.isoformat(),
        "abstract_inverted_index": inverted_index(make_abstract(rng)),
        "concepts": [
            {"id": f"https://openalex.org/{CONCEPT}", "display_name": "Finance", "level": 1, "score": 0.8},
            {"id": "https://openalex.org/C162324750", "display_name": "Economics", "level": 0, "score": 0.5},
        ],
    }
    if serial % 37 == 0:
        work["doi"] = None
    if serial % 53 == 0:
        work["abstract_inverted_index"] = None
    return work


def url(cursor: str, start: str = "2024-09-01", end: str = "2024-09-30") -> str:
    return (
        f"{BASE}?filter=from_publication_date:{start},to_publication_date:{end},"
        f"concepts.id:{CONCEPT}&per-page=200&cursor={cursor}"
    )


def page(results: list[dict], count: int, next_cursor: str | None, per_page: int = 200) -> dict:
    return {
        "meta": {"count": count, "db_response_time_ms": 42, "page": None,
                 "per_page": per_page, "next_cursor": next_cursor, "groups_count": None},
        "results": results,
        "group_by": [],
    }


def write_set(name: str, exchanges: list[dict]) -> None:
    d = HERE / name
    if d.exists():
        shutil.rmtree(d)
    d.mkdir(parents=True)
    for i, ex in enumerate(exchanges):
        (d / f"{i:03d}.json").write_text(json.dumps(ex, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def build_month(rng: random.Random, total: int, first_serial: int = 1) -> list[dict]:
    start = date(2024, 9, 1)
    return [make_work(rng, first_serial + i, start + timedelta(days=rng.randrange(30))) for i in range(total)]


def paginate(works: list[dict], count: int, per_page: int = 200) -> list[dict]:
    exchanges = []
    cursor = "*"
    chunks = [works[i:i + per_page] for i in range(0, len(works), per_page)] or [[]]
    for i, chunk in enumerate(chunks):
        nxt = f"cursor-page-{i + 2}" if i + 1 < len(chunks) else None
        exchanges.append({"url": url(cursor), "status": 200, "body": page(chunk, count, nxt, per_page)})
        cursor = nxt
    return exchanges


def main() -> None:
    rng = random.Random(20240930)
    works = build_month(rng, 450)
    write_set("finance_2024_09", paginate(works, 450))
    write_set("empty_2024_09", paginate([], 0))

    small = build_month(random.Random(7), 3, first_serial=9001)
    write_set("small_2024_09", paginate(small, 3))

    dup = build_month(random.Random(11), 250, first_serial=5001)
    dup[230] = dict(dup[10])  # same work again on page two
    write_set("dup_2024_09", paginate(dup, 250))


if __name__ == "__main__":
    main()
