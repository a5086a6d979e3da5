"""Corpus persistence between pipeline stages.

The canonical backend is a directory of monthly JSONL partitions
(``corpus/<YYYY>_<MM>.jsonl``). A SQLite backend implements the same
interface for deployments that prefer a relational store.
"""

from __future__ import annotations

import json
import os
import sqlite3
import tempfile
import threading
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Protocol

from .ingest import DateWindow, WorkRecord


class StorageError(Exception):
    pass


@dataclass
class CorpusEntry:
    record: WorkRecord
    ingested_at: datetime
    source_window: DateWindow

    @property
    def id(self) -> str:
        return self.record.id

    def sort_key(self) -> tuple[date, str]:
        return (self.record.publication_date, self.record.id)

    def to_flat(self) -> dict:
        r = self.record
        return {
            "id": r.id,
            "doi": r.doi,
            "title": r.title,
            "publication_date": r.publication_date.isoformat(),
            "abstract_text": r.abstract_text,
            "concepts": list(r.concepts),
            "fetched_at": r.fetched_at.isoformat(),
            "ingested_at": self.ingested_at.isoformat(),
            "window_start": self.source_window.start.isoformat(),
            "window_end": self.source_window.end.isoformat(),
        }

    @classmethod
    def from_flat(cls, d: dict) -> "CorpusEntry":
        try:
            record = WorkRecord(
                id=d["id"],
                doi=d.get("doi"),
                title=d["title"],
                publication_date=date.fromisoformat(d["publication_date"]),
                abstract_text=d["abstract_text"],
                concepts=list(d.get("concepts") or []),
                fetched_at=datetime.fromisoformat(d["fetched_at"]),
            )
            window = DateWindow(date.fromisoformat(d["window_start"]), date.fromisoformat(d["window_end"]))
            return cls(record, datetime.fromisoformat(d["ingested_at"]), window)
        except (KeyError, TypeError, ValueError) as exc:
            raise StorageError(f"malformed corpus line: {exc}") from exc


@dataclass
class StoreStats:
    total_entries: int
    windows_present: list[DateWindow]
    entries_missing_abstract: int


def _dump_line(entry: CorpusEntry) -> str:
    return json.dumps(entry.to_flat(), ensure_ascii=False) + "\n"


def read_jsonl(path: str | Path) -> list[CorpusEntry]:
    try:
        with open(path, encoding="utf-8", newline="\n") as fh:
            return [CorpusEntry.from_flat(json.loads(line)) for line in fh if line.strip()]
    except (OSError, ValueError) as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc


def _atomic_write(path: Path, lines: Iterable[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(lines)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class CorpusStore(Protocol):
    def upsert(self, entries: list[CorpusEntry]) -> tuple[int, int]: ...
    def list_by_window(self, window: DateWindow) -> list[CorpusEntry]: ...
    def export_jsonl(self, window: DateWindow, path: str | Path) -> int: ...
    def import_jsonl(self, path: str | Path) -> tuple[int, int]: ...
    def stats(self) -> StoreStats: ...


class _StoreMixin:
    def export_jsonl(self, window: DateWindow, path: str | Path) -> int:
        entries = self.list_by_window(window)
        try:
            _atomic_write(Path(path), (_dump_line(e) for e in entries))
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}") from exc
        return len(entries)

    def import_jsonl(self, path: str | Path) -> tuple[int, int]:
        return self.upsert(read_jsonl(path))


class JsonlStore(_StoreMixin):
    """Directory of monthly JSONL partitions keyed by publication month.

    Writes are serialized by a lock and each partition is replaced
    atomically, so readers never see a torn line.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.corpus_dir = self.root / "corpus"
        self._lock = threading.Lock()

    def _partition(self, day: date) -> Path:
        return self.corpus_dir / f"{day.year:04d}_{day.month:02d}.jsonl"

    def _load_all(self) -> dict[str, CorpusEntry]:
        entries: dict[str, CorpusEntry] = {}
        if self.corpus_dir.is_dir():
            for f in sorted(self.corpus_dir.glob("*.jsonl")):
                for e in read_jsonl(f):
                    entries[e.id] = e
        return entries

    def upsert(self, entries: list[CorpusEntry]) -> tuple[int, int]:
        with self._lock:
            current = self._load_all()
            inserted = replaced = 0
            touched: set[Path] = set()
            for e in entries:
                old = current.get(e.id)
                if old is None:
                    inserted += 1
                else:
                    replaced += 1
                    touched.add(self._partition(old.record.publication_date))
                current[e.id] = e
                touched.add(self._partition(e.record.publication_date))
            by_part: dict[Path, list[CorpusEntry]] = {p: [] for p in touched}
            for e in current.values():
                p = self._partition(e.record.publication_date)
                if p in by_part:
                    by_part[p].append(e)
            try:
                for p in sorted(by_part):
                    rows = sorted(by_part[p], key=CorpusEntry.sort_key)
                    _atomic_write(p, (_dump_line(e) for e in rows))
            except OSError as exc:
                raise StorageError(f"upsert failed: {exc}") from exc
            return inserted, replaced

    def list_by_window(self, window: DateWindow) -> list[CorpusEntry]:
        entries = self._load_all().values()
        return sorted((e for e in entries if e.record.publication_date in window), key=CorpusEntry.sort_key)

    def stats(self) -> StoreStats:
        entries = list(self._load_all().values())
        months = {DateWindow.for_month(e.record.publication_date.year, e.record.publication_date.month) for e in entries}
        return StoreStats(
            total_entries=len(entries),
            windows_present=sorted(months),
            entries_missing_abstract=sum(1 for e in entries if not e.record.abstract_text),
        )


class SqliteStore(_StoreMixin):
    """Relational backend: one ``works`` table keyed by work id."""

    def __init__(self, path: str | Path) -> None:
        self.path = str(path)
        self._lock = threading.Lock()
        try:
            with self._connect() as conn:
                conn.execute(
                    "CREATE TABLE IF NOT EXISTS works ("
                    " id TEXT PRIMARY KEY, publication_date TEXT NOT NULL,"
                    " has_abstract INTEGER NOT NULL, entry TEXT NOT NULL)"
                )
        except sqlite3.Error as exc:
            raise StorageError(f"cannot open {self.path}: {exc}") from exc

    def _connect(self) -> sqlite3.Connection:
        return sqlite3.connect(self.path)

    def upsert(self, entries: list[CorpusEntry]) -> tuple[int, int]:
        with self._lock:
            conn = self._connect()
            try:
                with conn:  # one transaction: all or nothing
                    existing = {row[0] for row in conn.execute("SELECT id FROM works")}
                    inserted = replaced = 0
                    for e in entries:
                        if e.id in existing:
                            replaced += 1
                        else:
                            inserted += 1
                            existing.add(e.id)
                        conn.execute(
                            "INSERT OR REPLACE INTO works VALUES (?, ?, ?, ?)",
                            (e.id, e.record.publication_date.isoformat(),
                             int(bool(e.record.abstract_text)), json.dumps(e.to_flat(), ensure_ascii=False)),
                        )
                return inserted, replaced
            except sqlite3.Error as exc:
                raise StorageError(f"upsert failed: {exc}") from exc
            finally:
                conn.close()

    def list_by_window(self, window: DateWindow) -> list[CorpusEntry]:
        try:
            with self._connect() as conn:
                rows = conn.execute(
                    "SELECT entry FROM works WHERE publication_date BETWEEN ? AND ?"
                    " ORDER BY publication_date, id",
                    (window.start.isoformat(), window.end.isoformat()),
                ).fetchall()
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc
        entries = [CorpusEntry.from_flat(json.loads(r[0])) for r in rows]
        # SQLite text collation may differ from Python's for non-ASCII ids.
        return sorted(entries, key=CorpusEntry.sort_key)

    def stats(self) -> StoreStats:
        try:
            with self._connect() as conn:
                total, missing = conn.execute(
                    "SELECT COUNT(*), COALESCE(SUM(1 - has_abstract), 0) FROM works"
                ).fetchone()
                months = [r[0] for r in conn.execute("SELECT DISTINCT substr(publication_date, 1, 7) FROM works")]
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc
        return StoreStats(total, sorted(DateWindow.parse_label(m) for m in months), missing)


def open_store(location: str | Path) -> CorpusStore:
    """``sqlite:///path/to.db`` selects SQLite; anything else is a JSONL directory."""
    loc = str(location)
    if loc.startswith("sqlite:///"):
        return SqliteStore(loc[len("sqlite:///"):])
    return JsonlStore(loc)
