"""Pipeline configuration: a JSON file, overridden by command-line flags.

Secrets are only read from the environment. Relative paths in the file are
resolved against the file's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .ingest import DEFAULT_LAG_DAYS, MAX_PER_PAGE
from .llm import API_KEY_ENV, DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MODEL, DEFAULT_TEMPERATURE
from .payload import DEFAULT_CHARS_PER_TOKEN, DEFAULT_MAX_TOKENS, TokenBudget

PROVIDERS = ("live", "mock", "extractive-only")
_PATH_FIELDS = ("output_dir", "store_dir", "template_overrides", "stopword_file", "replay_dir")


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    concept_id: str | None = None
    concept_name: str | None = None
    lag_days: int = DEFAULT_LAG_DAYS
    max_tokens_per_request: int = DEFAULT_MAX_TOKENS
    chars_per_token: float = DEFAULT_CHARS_PER_TOKEN
    provider: str = "live"
    rate_limit_rps: float = 5.0
    contact_email: str | None = None
    output_dir: Path = Path("out")
    store_dir: str | Path = Path("data")
    template_overrides: Path | None = None
    stopword_file: Path | None = None
    model_name: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    digest_title: str = "Financial Digest"
    authors: list[str] = field(default_factory=list)
    per_page: int = MAX_PER_PAGE
    works_url: str = "https://api.openalex.org/works"
    concepts_url: str = "https://api.openalex.org/concepts"
    llm_base_url: str = "https://generativelanguage.googleapis.com"
    retry_max_attempts: int = 3
    retry_base_delay: float = 1.0
    retry_jitter: float = 0.2
    seed: int | None = None
    summary_top_k: int = 5
    debug_payloads: bool = False
    # Serve OpenAlex traffic from recorded exchanges instead of the network.
    replay_dir: Path | None = None

    @property
    def budget(self) -> TokenBudget:
        return TokenBudget(self.max_tokens_per_request, self.chars_per_token)

    @property
    def api_key(self) -> str | None:
        return os.environ.get(API_KEY_ENV)

    def validate(self) -> "PipelineConfig":
        if self.provider not in PROVIDERS:
            raise ConfigError(f"provider must be one of {', '.join(PROVIDERS)}, got {self.provider!r}")
        if self.lag_days < 1:
            raise ConfigError("lag_days must be >= 1")
        if self.rate_limit_rps <= 0:
            raise ConfigError("rate_limit_rps must be > 0")
        if not 1 <= self.per_page <= MAX_PER_PAGE:
            raise ConfigError(f"per_page must be in [1, {MAX_PER_PAGE}]")
        if self.summary_top_k < 1:
            raise ConfigError("summary_top_k must be >= 1")
        try:
            self.budget
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for name in ("template_overrides", "stopword_file", "replay_dir"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{name} does not exist: {p}")
        if self.provider == "live" and not self.api_key:
            raise ConfigError(f"provider 'live' requires the {API_KEY_ENV} environment variable")
        return self


def _coerce_paths(values: dict[str, Any], base: Path) -> dict[str, Any]:
    out = dict(values)
    for name in _PATH_FIELDS:
        v = out.get(name)
        if v is None:
            continue
        if name == "store_dir" and str(v).startswith("sqlite:///"):
            continue
        p = Path(v).expanduser()
        out[name] = p if p.is_absolute() else (base / p)
    return out


def load_config(path: str | Path | None = None, **overrides: Any) -> PipelineConfig:
    """Build a validated config from an optional JSON file plus keyword overrides.

    ``None`` overrides are ignored so unset flags do not clobber file values.
    """
    known = {f.name for f in fields(PipelineConfig)}
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values = _coerce_paths(data, path.parent)
    values.update(_coerce_paths({k: v for k, v in overrides.items() if v is not None}, Path.cwd()))
    try:
        config = replace(PipelineConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return config.validate()
