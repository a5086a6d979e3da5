"""The three pipeline stages: fetch, generate, render."""

from __future__ import annotations

import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Callable

from .config import ConfigError, PipelineConfig
from .document import (
    DigestMetadata,
    DigestSection,
    MissingSection,
    assemble,
    source_listing,
    write_outputs,
)
from .extractive import DEFAULT_STOPWORDS, SummaryConfig, extract_summary, load_stopwords
from .ingest import DateWindow, OpenAlexClient, compute_window
from .llm import (
    MAX_CONCURRENT_COMPLETIONS,
    CompletionRequest,
    GeminiProvider,
    MockProvider,
    Provider,
)
from .payload import build_payloads, serialize_payload
from .prompts import PromptTemplate, SectionKind, load_templates, render, render_merge
from .store import CorpusEntry, CorpusStore, open_store
from .transport import ReplayTransport, RetryPolicy

logger = logging.getLogger(__name__)

LLM_REQUIRED_NOTICE = (
    "This section requires an LLM provider and was not generated in extractive-only mode."
)
EMPTY_CORPUS_NOTICE = "No articles were published in this period."


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass
class FetchSummary:
    window: DateWindow
    fetched: int
    inserted: int
    replaced: int

    @property
    def stored(self) -> int:
        return self.inserted + self.replaced

    def line(self) -> str:
        return (
            f"window {self.window} fetched {self.fetched} stored {self.stored}"
            f" (inserted {self.inserted}, replaced {self.replaced})"
        )


@dataclass
class SectionStatus:
    kind: SectionKind
    chunks: int
    attempts: int
    status: str  # "generated", "cached" or "failed"
    error: Exception | None = None


class GenerateFailed(Exception):
    def __init__(self, statuses: list[SectionStatus]) -> None:
        failed = [s for s in statuses if s.status == "failed"]
        super().__init__("; ".join(f"{s.kind.value}: {s.error}" for s in failed))
        self.statuses = statuses
        self.failed = failed


class Pipeline:
    """Wires config to the ingest, store, payload, prompt, LLM and document modules.

    ``transport``, ``provider``, ``sleep`` and ``clock`` may be injected for tests.
    """

    def __init__(
        self,
        config: PipelineConfig,
        *,
        transport=None,
        provider: Provider | None = None,
        llm_transport=None,
        sleep: Callable[[float], None] | None = None,
        clock: Callable[[], datetime] = _utcnow,
    ) -> None:
        self.config = config
        self.clock = clock
        self.rng = random.Random(config.seed)
        self.retry = RetryPolicy(config.retry_max_attempts, config.retry_base_delay, config.retry_jitter)
        self._sleep_kw = {"sleep": sleep} if sleep is not None else {}
        if transport is None and config.replay_dir is not None:
            transport = ReplayTransport.from_path(config.replay_dir)
        self.transport = transport
        self._provider = provider
        self._llm_transport = llm_transport
        try:
            self.templates = load_templates(config.template_overrides)
        except ValueError as exc:
            raise ConfigError(f"bad template overrides: {exc}") from exc
        self._store: CorpusStore | None = None

    @property
    def store(self) -> CorpusStore:
        if self._store is None:
            self._store = open_store(self.config.store_dir)
        return self._store

    def client(self) -> OpenAlexClient:
        c = self.config
        return OpenAlexClient(
            self.transport,
            base_url=c.works_url,
            concepts_url=c.concepts_url,
            per_page=c.per_page,
            contact_email=c.contact_email,
            rate_limit_rps=c.rate_limit_rps,
            retry=self.retry,
            rng=self.rng,
            clock=self.clock,
            **self._sleep_kw,
        )

    def provider(self) -> Provider | None:
        if self._provider is None:
            c = self.config
            if c.provider == "mock":
                self._provider = MockProvider({k: t.instruction_text for k, t in self.templates.items()})
            elif c.provider == "live":
                self._provider = GeminiProvider(
                    c.api_key,
                    base_url=c.llm_base_url,
                    transport=self._llm_transport,
                    retry=self.retry,
                    rng=self.rng,
                    **self._sleep_kw,
                )
        return self._provider

    def window_for(self, run_date: date | None = None, label: str | None = None) -> DateWindow:
        if label:
            return DateWindow.parse_label(label)
        return compute_window(run_date or self.clock().date(), self.config.lag_days)

    # --- concept -------------------------------------------------------

    @property
    def concept_cache(self) -> Path:
        return Path(self.config.output_dir) / "concept_cache.json"

    def resolve_concept(self, name: str) -> str:
        cache = self.concept_cache
        cached = json.loads(cache.read_text(encoding="utf-8")) if cache.exists() else {}
        key = name.casefold()
        if key not in cached:
            concept_id, display = self.client().resolve_concept(name)
            cached[key] = {"id": concept_id, "display_name": display}
            cache.parent.mkdir(parents=True, exist_ok=True)
            cache.write_text(json.dumps(cached, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return cached[key]["id"]

    def concept_id(self) -> str:
        if self.config.concept_id:
            return self.config.concept_id
        if self.config.concept_name:
            return self.resolve_concept(self.config.concept_name)
        raise ConfigError("set concept_id (or concept_name) in the config")

    # --- stages --------------------------------------------------------

    def fetch(self, window: DateWindow) -> FetchSummary:
        concept = self.concept_id()
        records = self.client().fetch_all(window, concept)
        now = self.clock()
        inserted, replaced = self.store.upsert([CorpusEntry(r, now, window) for r in records])
        return FetchSummary(window, len(records), inserted, replaced)

    def sections_dir(self, window: DateWindow) -> Path:
        return Path(self.config.output_dir) / "sections" / window.label.replace("-", "_")

    def section_path(self, window: DateWindow, kind: SectionKind) -> Path:
        return self.sections_dir(window) / f"{kind.value}.json"

    def _summary_config(self) -> SummaryConfig:
        stop = load_stopwords(self.config.stopword_file) if self.config.stopword_file else DEFAULT_STOPWORDS
        return SummaryConfig(top_k=self.config.summary_top_k, stopwords=stop)

    def _fingerprint(self, template: PromptTemplate, payload_jsons: list[str]) -> str:
        c = self.config
        h = hashlib.sha256()
        for part in (c.provider, c.model_name, str(c.temperature), str(c.max_output_tokens),
                     str(c.summary_top_k), template.instruction_text, *payload_jsons):
            h.update(part.encode("utf-8"))
            h.update(b"\0")
        if c.provider == "extractive-only" and c.stopword_file:
            h.update(Path(c.stopword_file).read_bytes())
        return h.hexdigest()

    def _request(self, prompt_text: str) -> CompletionRequest:
        c = self.config
        return CompletionRequest(prompt_text, c.model_name, c.max_output_tokens, c.temperature)

    def _generate_llm(self, kind: SectionKind, payload_jsons: list[str]) -> tuple[str, int]:
        provider = self.provider()
        template = self.templates[kind]
        partials, attempts = [], 0
        for pj in payload_jsons:
            result = provider.complete(self._request(render(template, pj).full_text))
            partials.append(result.text)
            attempts += result.attempts
        if len(partials) == 1:
            return partials[0], attempts
        merged = provider.complete(self._request(render_merge(kind, partials).full_text))
        return merged.text, attempts + merged.attempts

    def _generate_extractive(self, kind: SectionKind, entries: list[CorpusEntry]) -> str:
        if kind is not SectionKind.KEY_FINDINGS:
            return LLM_REQUIRED_NOTICE
        text = " ".join(e.record.abstract_text for e in entries if e.record.abstract_text)
        return extract_summary(text, self._summary_config()) or EMPTY_CORPUS_NOTICE

    def generate(self, window: DateWindow) -> list[SectionStatus]:
        entries = self.store.list_by_window(window)
        payloads = build_payloads(entries, self.config.budget, window.label)
        payload_jsons = [serialize_payload(p) for p in payloads]
        if self.config.debug_payloads:
            out = Path(self.config.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            tag = window.label.replace("-", "_")
            for p, pj in zip(payloads, payload_jsons):
                (out / f"payload_{tag}_{p.chunk_index}.json").write_text(pj, encoding="utf-8")

        sections_dir = self.sections_dir(window)
        sections_dir.mkdir(parents=True, exist_ok=True)

        def run(kind: SectionKind) -> SectionStatus:
            fingerprint = self._fingerprint(self.templates[kind], payload_jsons)
            path = self.section_path(window, kind)
            if path.exists():
                try:
                    saved = json.loads(path.read_text(encoding="utf-8"))
                    if saved.get("fingerprint") == fingerprint:
                        return SectionStatus(kind, saved["contributing_chunks"], 0, "cached")
                except (ValueError, KeyError):
                    logger.warning("ignoring unreadable section file %s", path)
            try:
                if self.config.provider == "extractive-only":
                    body, attempts = self._generate_extractive(kind, entries), 0
                else:
                    body, attempts = self._generate_llm(kind, payload_jsons)
            except Exception as exc:  # reported per section; completed ones are kept
                logger.error("section %s failed: %s", kind.value, exc)
                return SectionStatus(kind, len(payloads), getattr(exc, "attempts", 0), "failed", exc)
            record = {
                "kind": kind.value,
                "heading": kind.heading,
                "period": window.label,
                "body": body,
                "contributing_chunks": len(payloads),
                "attempts": attempts,
                "provider": self.config.provider,
                "fingerprint": fingerprint,
            }
            tmp = path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(record, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
            tmp.replace(path)
            return SectionStatus(kind, len(payloads), attempts, "generated")

        with ThreadPoolExecutor(max_workers=MAX_CONCURRENT_COMPLETIONS) as pool:
            statuses = list(pool.map(run, SectionKind.ordered()))
        if any(s.status == "failed" for s in statuses):
            raise GenerateFailed(statuses)
        return statuses

    def load_sections(self, window: DateWindow) -> list[DigestSection]:
        sections = []
        for kind in SectionKind.ordered():
            path = self.section_path(window, kind)
            if not path.exists():
                raise MissingSection(kind)
            data = json.loads(path.read_text(encoding="utf-8"))
            sections.append(DigestSection(kind, data["body"], data.get("contributing_chunks", 1)))
        return sections

    def render(self, window: DateWindow) -> tuple[Path, Path]:
        sections = self.load_sections(window)
        sources = source_listing(self.store.list_by_window(window))
        meta = DigestMetadata(self.config.digest_title, window.label, tuple(self.config.authors), self.clock())
        return write_outputs(assemble(sections, sources, meta), self.config.output_dir)

    def run(self, run_date: date | None = None) -> tuple[FetchSummary, list[SectionStatus], Path, Path]:
        window = self.window_for(run_date)
        summary = self.fetch(window)
        statuses = self.generate(window)
        pdf, md = self.render(window)
        return summary, statuses, pdf, md
