"""Digest section kinds, their prompt templates, and prompt rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping


class SectionKind(str, Enum):
    KEY_FINDINGS = "KeyFindings"
    THEMES = "Themes"
    CONNECTIONS = "Connections"
    FUTURE_DIRECTIONS = "FutureDirections"

    @property
    def heading(self) -> str:
        return _TITLES[self]

    @classmethod
    def ordered(cls) -> list["SectionKind"]:
        return [cls.KEY_FINDINGS, cls.THEMES, cls.CONNECTIONS, cls.FUTURE_DIRECTIONS]


_TITLES = {
    SectionKind.KEY_FINDINGS: "Key Findings",
    SectionKind.THEMES: "Themes and Emerging Trends",
    SectionKind.CONNECTIONS: "Connections Across Papers",
    SectionKind.FUTURE_DIRECTIONS: "Implications and Future Directions",
}

DEFAULT_INSTRUCTIONS: dict[SectionKind, str] = {
    SectionKind.KEY_FINDINGS: (
        "Summarize the key findings in all abstract parts of this article from the provided "
        "research articles. Please describe widely and cite most interesting."
    ),
    SectionKind.THEMES: (
        "What are the main themes or trends emerging from these articles? "
        "Take into account only abstracts (values)"
    ),
    SectionKind.CONNECTIONS: (
        "Can you identify any commonalities or connections between the different research papers?"
    ),
    SectionKind.FUTURE_DIRECTIONS: (
        "What are the major implications for future directions suggested by this research? "
        "Describe future possibilities."
    ),
}

# Reduce step for multi-chunk payloads.
MERGE_INSTRUCTION = "Merge the following partial analyses into one coherent section, removing duplicates."

DEFAULT_VERSION = "default-1"
SEPARATOR = "\n\n"


@dataclass(frozen=True)
class PromptTemplate:
    kind: SectionKind
    instruction_text: str
    version_tag: str = DEFAULT_VERSION

    def __post_init__(self) -> None:
        if not self.instruction_text.strip():
            raise ValueError(f"empty instruction for {self.kind.value}")


@dataclass(frozen=True)
class RenderedPrompt:
    kind: SectionKind
    full_text: str
    payload_chunk: tuple[int, int]


def default_template(kind: SectionKind) -> PromptTemplate:
    return PromptTemplate(kind, DEFAULT_INSTRUCTIONS[kind])


def load_templates(override_path: str | Path | None = None) -> dict[SectionKind, PromptTemplate]:
    """Default templates, with instructions replaced from a ``{kind name: text}`` JSON file."""
    templates = {k: default_template(k) for k in SectionKind.ordered()}
    if override_path is None:
        return templates
    data = json.loads(Path(override_path).read_text(encoding="utf-8"))
    if not isinstance(data, Mapping):
        raise ValueError("template override file must hold a JSON object")
    for name, text in data.items():
        try:
            kind = SectionKind(name)
        except ValueError:
            raise ValueError(f"unknown section kind {name!r} in {override_path}") from None
        if not isinstance(text, str):
            raise ValueError(f"instruction for {name} must be a string")
        templates[kind] = PromptTemplate(kind, text, "override")
    return templates


def _chunk_of(payload_json: str) -> tuple[int, int]:
    try:
        data = json.loads(payload_json)
    except ValueError:
        return (0, 1)
    if isinstance(data, dict) and isinstance(data.get("chunk"), int) and isinstance(data.get("chunk_total"), int):
        return (data["chunk"], data["chunk_total"])
    return (0, 1)


def render(template: PromptTemplate, payload_json: str) -> RenderedPrompt:
    if not payload_json:
        raise ValueError("payload_json must be non-empty")
    return RenderedPrompt(
        template.kind,
        template.instruction_text + SEPARATOR + payload_json,
        _chunk_of(payload_json),
    )


def render_merge(kind: SectionKind, partials: list[str]) -> RenderedPrompt:
    payload = json.dumps({"section": kind.value, "partials": partials}, ensure_ascii=False, separators=(",", ":"))
    return RenderedPrompt(kind, MERGE_INSTRUCTION + SEPARATOR + payload, (0, 1))
