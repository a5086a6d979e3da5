"""Digest document model and its Markdown / PDF renderings."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Sequence
from xml.sax.saxutils import escape

from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import cm
from reportlab.platypus import (
    Flowable,
    ListFlowable,
    ListItem,
    PageBreak,
    Paragraph,
    SimpleDocTemplate,
    Spacer,
)
from reportlab.platypus.tableofcontents import TableOfContents

from .prompts import SectionKind
from .store import CorpusEntry

FILENAME_PREFIX = "FinancialDigest"
FILENAME_RE = re.compile(r"FinancialDigest_\d{4}_\d{2}\.pdf")
NO_DOI = "n/a"


class DocumentError(ValueError):
    pass


class MissingSection(DocumentError):
    def __init__(self, kind: SectionKind) -> None:
        super().__init__(f"missing section {kind.value}")
        self.kind = kind


class DuplicateSection(DocumentError):
    def __init__(self, kind: SectionKind) -> None:
        super().__init__(f"duplicate section {kind.value}")
        self.kind = kind


class RenderError(Exception):
    pass


@dataclass(frozen=True)
class DigestSection:
    kind: SectionKind
    body: str
    contributing_chunks: int = 1
    heading: str = ""

    def __post_init__(self) -> None:
        if not self.heading:
            object.__setattr__(self, "heading", self.kind.heading)


@dataclass(frozen=True)
class SourceEntry:
    title: str
    doi: str
    work_id: str

    @classmethod
    def from_entry(cls, entry: CorpusEntry) -> "SourceEntry":
        r = entry.record
        return cls(r.title, r.doi or NO_DOI, r.id)


def source_listing(entries: Iterable[CorpusEntry]) -> tuple[SourceEntry, ...]:
    return tuple(SourceEntry.from_entry(e) for e in entries)


@dataclass(frozen=True)
class DigestMetadata:
    title: str
    period_label: str
    authors: tuple[str, ...]
    generated_at: datetime

    def __post_init__(self) -> None:
        if not re.fullmatch(r"\d{4}-\d{2}", self.period_label):
            raise DocumentError(f"period label must be YYYY-MM, got {self.period_label!r}")
        object.__setattr__(self, "authors", tuple(self.authors))


@dataclass(frozen=True)
class DigestDocument:
    title: str
    period_label: str
    authors: tuple[str, ...]
    generated_at: datetime
    sections: tuple[DigestSection, ...]
    sources: tuple[SourceEntry, ...]
    # Called with the PDF story before building; may insert flowables (charts etc).
    pre_render: Callable[[list[Flowable]], None] | None = field(default=None, compare=False)

    @property
    def filename_stem(self) -> str:
        year, month = self.period_label.split("-")
        return f"{FILENAME_PREFIX}_{year}_{month}"


def assemble(
    sections: Sequence[DigestSection],
    sources: Sequence[SourceEntry],
    metadata: DigestMetadata,
    pre_render: Callable[[list[Flowable]], None] | None = None,
) -> DigestDocument:
    by_kind: dict[SectionKind, DigestSection] = {}
    for s in sections:
        if s.kind in by_kind:
            raise DuplicateSection(s.kind)
        by_kind[s.kind] = s
    ordered = []
    for kind in SectionKind.ordered():
        if kind not in by_kind:
            raise MissingSection(kind)
        if not by_kind[kind].body.strip():
            raise DocumentError(f"section {kind.value} has an empty body")
        ordered.append(by_kind[kind])
    return DigestDocument(
        title=metadata.title,
        period_label=metadata.period_label,
        authors=metadata.authors,
        generated_at=metadata.generated_at,
        sections=tuple(ordered),
        sources=tuple(sources),
        pre_render=pre_render,
    )


_MD_HEADING = re.compile(r"^(#{1,2})(?=\s)")


def _demote_headings(body: str) -> str:
    # Section bodies may not introduce H1/H2 headings of their own.
    return "\n".join(_MD_HEADING.sub("###", line) for line in body.strip().splitlines())


def generated_line(doc: DigestDocument) -> str:
    return f"- Generated: {doc.generated_at.isoformat()}"


def render_markdown(doc: DigestDocument) -> str:
    out = [f"# {doc.title}", ""]
    out.append(f"- Period: {doc.period_label}")
    out.append(f"- Authors: {', '.join(doc.authors) if doc.authors else 'n/a'}")
    out.append(generated_line(doc))
    out += ["", "**Contents**", ""]
    out += [f"{i}. {s.heading}" for i, s in enumerate(doc.sections, 1)]
    out.append(f"{len(doc.sections) + 1}. Sources")
    for s in doc.sections:
        out += ["", f"## {s.heading}", "", _demote_headings(s.body)]
    out += ["", "## Sources", ""]
    if doc.sources:
        out += [f"{i}. {src.title} — {src.doi}" for i, src in enumerate(doc.sources, 1)]
    else:
        out.append("No articles were published in this period.")
    return "\n".join(out) + "\n"


class _DigestTemplate(SimpleDocTemplate):
    """Feeds H1 headings into the table of contents."""

    def afterFlowable(self, flowable):
        if isinstance(flowable, Paragraph) and flowable.style.name == "Heading1":
            self.notify("TOCEntry", (0, flowable.getPlainText(), self.page))


def _page_number(canvas, doc) -> None:
    canvas.saveState()
    canvas.setFont("Helvetica", 9)
    canvas.drawCentredString(A4[0] / 2, 1.2 * cm, f"Page {doc.page}")
    canvas.restoreState()


def _body_flowables(body: str, styles) -> list[Flowable]:
    """Blank-line separated paragraphs; ``-``/``*`` lines become bullets, ``#`` lines subheadings."""
    flow: list[Flowable] = []
    bullets: list[str] = []

    def flush_bullets() -> None:
        if bullets:
            items = [ListItem(Paragraph(escape(b), styles["BodyText"])) for b in bullets]
            flow.append(ListFlowable(items, bulletType="bullet", leftIndent=12))
            bullets.clear()

    para: list[str] = []

    def flush_para() -> None:
        if para:
            flow.append(Paragraph("<br/>".join(escape(p) for p in para), styles["BodyText"]))
            para.clear()

    for line in body.strip().splitlines():
        stripped = line.strip()
        if not stripped:
            flush_bullets()
            flush_para()
        elif stripped[:2] in ("- ", "* "):
            flush_para()
            bullets.append(stripped[2:])
        elif stripped.startswith("#"):
            flush_bullets()
            flush_para()
            flow.append(Paragraph(escape(stripped.lstrip("#").strip()), styles["Heading3"]))
        else:
            flush_bullets()
            para.append(stripped)
    flush_bullets()
    flush_para()
    return flow


def build_story(doc: DigestDocument) -> list[Flowable]:
    styles = getSampleStyleSheet()
    title_style = ParagraphStyle("DigestTitle", parent=styles["Title"], fontSize=26, leading=32)
    centered = ParagraphStyle("Centered", parent=styles["Normal"], alignment=1, fontSize=13, leading=18)

    story: list[Flowable] = [Spacer(1, 6 * cm), Paragraph(escape(doc.title), title_style), Spacer(1, 1 * cm)]
    story.append(Paragraph(f"Period covered: {escape(doc.period_label)}", centered))
    if doc.authors:
        story.append(Paragraph("Authors: " + escape(", ".join(doc.authors)), centered))
    story.append(Paragraph(f"Generated: {escape(doc.generated_at.strftime('%Y-%m-%d %H:%M UTC'))}", centered))
    story.append(PageBreak())

    toc = TableOfContents()
    toc.levelStyles = [ParagraphStyle("TOC1", parent=styles["Normal"], fontSize=12, leading=18)]
    story += [Paragraph("Contents", styles["Title"]), toc, PageBreak()]

    for section in doc.sections:
        story.append(Paragraph(escape(section.heading), styles["Heading1"]))
        story += _body_flowables(section.body, styles)
        story.append(Spacer(1, 0.5 * cm))

    story.append(PageBreak())
    story.append(Paragraph("Sources", styles["Heading1"]))
    if doc.sources:
        items = [
            ListItem(Paragraph(f"{escape(src.title)}<br/>DOI: {escape(src.doi)}", styles["BodyText"]))
            for src in doc.sources
        ]
        story.append(ListFlowable(items, bulletType="1"))
    else:
        story.append(Paragraph("No articles were published in this period.", styles["BodyText"]))
    return story


def render_pdf(doc: DigestDocument, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    path = out_dir / f"{doc.filename_stem}.pdf"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        story = build_story(doc)
        if doc.pre_render is not None:
            doc.pre_render(story)
        template = _DigestTemplate(
            str(path),
            pagesize=A4,
            title=doc.title,
            author=", ".join(doc.authors),
            subject=f"Research digest {doc.period_label}",
            bottomMargin=2.5 * cm,
        )
        template.multiBuild(story, onFirstPage=lambda c, d: None, onLaterPages=_page_number)
    except Exception as exc:
        raise RenderError(f"cannot render {path}: {exc}") from exc
    return path


def write_outputs(doc: DigestDocument, out_dir: str | Path) -> tuple[Path, Path]:
    """Render the PDF and its sibling Markdown file; returns (pdf, markdown)."""
    pdf = render_pdf(doc, out_dir)
    md = Path(out_dir) / f"{doc.filename_stem}.md"
    try:
        md.write_text(render_markdown(doc), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise RenderError(f"cannot write {md}: {exc}") from exc
    return pdf, md
