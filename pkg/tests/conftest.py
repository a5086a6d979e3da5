from __future__ import annotations

import json
from datetime import date, datetime, timezone
from pathlib import Path

import pytest

from findigest.ingest import DateWindow, WorkRecord
from findigest.store import CorpusEntry

FIXTURES = Path(__file__).parent / "fixtures" / "openalex"
CONCEPT = "C10138342"
SEPT = DateWindow.for_month(2024, 9)
FIXED_NOW = datetime(2024, 10, 25, 12, 0, tzinfo=timezone.utc)


def fixture_dir(name: str) -> Path:
    return FIXTURES / name


def fixture_works(name: str) -> list[dict]:
    works = []
    for f in sorted(fixture_dir(name).glob("*.json")):
        works.extend(json.loads(f.read_text(encoding="utf-8"))["body"]["results"])
    return works


def make_entry(
    wid: str,
    day: date,
    abstract: str = "Some abstract.",
    doi: str | None = "10.1/x",
    title: str | None = None,
) -> CorpusEntry:
    record = WorkRecord(wid, doi, title or f"Title {wid}", day, abstract, ["C1"], FIXED_NOW)
    return CorpusEntry(record, FIXED_NOW, DateWindow.for_month(day.year, day.month))


class FakeClock:
    """Monotonic clock whose sleep just advances time."""

    def __init__(self) -> None:
        self.now = 0.0
        self.sleeps: list[float] = []

    def __call__(self) -> float:
        return self.now

    def sleep(self, seconds: float) -> None:
        self.sleeps.append(seconds)
        self.now += seconds


@pytest.fixture
def fake_clock() -> FakeClock:
    return FakeClock()


@pytest.fixture
def mock_config(tmp_path):
    """Config dict for an offline mock run rooted in tmp_path."""
    cfg = {
        "concept_id": CONCEPT,
        "provider": "mock",
        "output_dir": str(tmp_path / "out"),
        "store_dir": str(tmp_path / "data"),
        "seed": 1234,
        "authors": ["A. Analyst"],
        "retry_base_delay": 0.01,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        status, name = RESULTS[number]
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {name}")
