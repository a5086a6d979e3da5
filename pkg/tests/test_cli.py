from __future__ import annotations

import json

import pytest

from conftest import FIXED_NOW, fixture_dir, fixture_works
from findigest import cli
from findigest.config import ConfigError, load_config
from findigest.extractive import SummaryConfig, extract_summary
from findigest.ingest import reconstruct_abstract
from findigest.llm import ErrorCategory, MockProvider, ProviderError
from findigest.pipeline import LLM_REQUIRED_NOTICE
from findigest.prompts import SectionKind
from findigest.transport import ReplayTransport

RUN_DATE = "2024-10-25"
LLM_URL = "https://generativelanguage.googleapis.com/v1beta/models/gemini-1.5-pro:generateContent"


def run(argv, **kw):
    kw.setdefault("clock", lambda: FIXED_NOW)
    kw.setdefault("sleep", lambda s: None)
    return cli.main(argv, **kw)


def base(config, fixture="small_2024_09"):
    return ["--config", str(config), "--run-date", RUN_DATE, "--replay", str(fixture_dir(fixture))]


def out_dir(config):
    return config.parent / "out"


def test_fetch_fixture(mock_config, capsys):
    assert run(base(mock_config, "finance_2024_09") + ["fetch"]) == 0
    line = capsys.readouterr().out.strip()
    assert "2024-09-01..2024-09-30" in line and "stored 450" in line


def test_fetch_empty(mock_config, capsys):
    assert run(base(mock_config, "empty_2024_09") + ["fetch"]) == 0
    assert "stored 0" in capsys.readouterr().out


def test_fetch_unreachable(mock_config, capsys):
    cfg = json.loads(mock_config.read_text())
    cfg["works_url"] = "http://127.0.0.1:9/works"
    mock_config.write_text(json.dumps(cfg))
    code = run(["--config", str(mock_config), "--run-date", RUN_DATE, "fetch"])
    assert code == cli.EXIT_INGEST
    assert "Transport" in capsys.readouterr().err


def test_flags_after_command(mock_config, capsys):
    assert run(["fetch", *base(mock_config)]) == 0
    assert "stored 3" in capsys.readouterr().out


def test_generate_mock(mock_config, capsys):
    assert run(base(mock_config) + ["fetch"]) == 0
    assert run(base(mock_config) + ["generate"]) == 0
    files = sorted((out_dir(mock_config) / "sections" / "2024_09").glob("*.json"))
    assert [f.stem for f in files] == sorted(k.value for k in SectionKind)
    for f in files:
        assert json.loads(f.read_text())["body"].startswith("[MOCK")


def test_generate_extractive_only(mock_config):
    run(base(mock_config) + ["fetch"])
    assert run(base(mock_config) + ["--provider", "extractive-only", "generate"]) == 0
    sec = out_dir(mock_config) / "sections" / "2024_09"
    works = sorted(fixture_works("small_2024_09"), key=lambda w: (w["publication_date"], w["id"]))
    text = " ".join(a for a in (reconstruct_abstract(w["abstract_inverted_index"]) for w in works) if a)
    assert json.loads((sec / "KeyFindings.json").read_text())["body"] == extract_summary(text, SummaryConfig(top_k=5))
    for kind in ("Themes", "Connections", "FutureDirections"):
        assert json.loads((sec / f"{kind}.json").read_text())["body"] == LLM_REQUIRED_NOTICE


def test_generate_live_persistent_429(mock_config, monkeypatch, capsys):
    monkeypatch.setenv("GEMINI_API_KEY", "test-key")
    run(base(mock_config) + ["fetch"])
    llm = ReplayTransport([{"url": LLM_URL, "status": 429, "body": {}}])
    code = run(base(mock_config) + ["--provider", "live", "generate"], llm_transport=llm)
    assert code == cli.EXIT_PROVIDER
    assert "RateLimit" in capsys.readouterr().err
    assert llm.call_count == 4 * 3


def test_live_without_key_fails_before_network(mock_config, monkeypatch, capsys):
    monkeypatch.delenv("GEMINI_API_KEY", raising=False)
    transport = ReplayTransport([])
    code = run(["--config", str(mock_config), "--run-date", RUN_DATE, "--provider", "live", "run"],
               transport=transport)
    assert code == cli.EXIT_CONFIG
    assert transport.call_count == 0
    assert "GEMINI_API_KEY" in capsys.readouterr().err


def test_render_after_generate(mock_config, capsys):
    run(base(mock_config) + ["fetch"])
    run(base(mock_config) + ["generate"])
    capsys.readouterr()
    assert run(base(mock_config) + ["render"]) == 0
    assert capsys.readouterr().out.strip().endswith("FinancialDigest_2024_09.pdf")
    assert (out_dir(mock_config) / "FinancialDigest_2024_09.md").exists()


def test_render_with_window_flag(mock_config, capsys):
    run(base(mock_config) + ["fetch"])
    run(["--config", str(mock_config), "--window", "2024-09", "generate"])
    assert run(["--config", str(mock_config), "--window", "2024-09", "render"]) == 0


def test_render_missing_section(mock_config, capsys):
    run(base(mock_config) + ["fetch"])
    run(base(mock_config) + ["generate"])
    (out_dir(mock_config) / "sections" / "2024_09" / "Connections.json").unlink()
    capsys.readouterr()
    assert run(base(mock_config) + ["render"]) == cli.EXIT_RENDER
    assert "Connections" in capsys.readouterr().err


def test_render_rerun_identical(mock_config):
    run(base(mock_config) + ["fetch"])
    run(base(mock_config) + ["generate"])
    run(base(mock_config) + ["render"])
    md = out_dir(mock_config) / "FinancialDigest_2024_09.md"
    first = md.read_bytes()
    run(base(mock_config) + ["render"])
    assert md.read_bytes() == first


def _strip_generated(text: str) -> str:
    return "\n".join(l for l in text.splitlines() if not l.startswith("- Generated: "))


def test_run_twice_identical_modulo_timestamp(mock_config):
    md = out_dir(mock_config) / "FinancialDigest_2024_09.md"
    assert cli.main(base(mock_config) + ["run"], sleep=lambda s: None) == 0
    first = md.read_text()
    assert cli.main(base(mock_config) + ["run"], sleep=lambda s: None) == 0
    assert _strip_generated(md.read_text()) == _strip_generated(first)


def test_stage_separation(tmp_path, mock_config):
    other = tmp_path / "sep"
    other.mkdir()
    cfg = json.loads(mock_config.read_text())
    cfg.update(output_dir=str(other / "out"), store_dir=str(other / "data"))
    (other / "config.json").write_text(json.dumps(cfg))
    assert run(base(mock_config, "finance_2024_09") + ["run"]) == 0
    for cmd in ("fetch", "generate", "render"):
        assert run(base(other / "config.json", "finance_2024_09") + [cmd]) == 0
    a = out_dir(mock_config) / "FinancialDigest_2024_09.md"
    b = other / "out" / "FinancialDigest_2024_09.md"
    assert a.read_bytes() == b.read_bytes()
    for kind in SectionKind:
        sa = json.loads((out_dir(mock_config) / "sections" / "2024_09" / f"{kind.value}.json").read_text())
        sb = json.loads((other / "out" / "sections" / "2024_09" / f"{kind.value}.json").read_text())
        assert sa == sb


class FlakyProvider(MockProvider):
    """Fails every Themes request; other kinds behave like the mock."""

    def complete(self, request):
        if self.detect_kind(request.prompt_text) == "Themes":
            raise ProviderError(ErrorCategory.TRANSPORT, "boom", 3)
        return super().complete(request)


def test_generate_resume_keeps_completed_sections(mock_config, capsys):
    run(base(mock_config) + ["fetch"])
    assert run(base(mock_config) + ["generate"], provider=FlakyProvider()) == cli.EXIT_PROVIDER
    sec = out_dir(mock_config) / "sections" / "2024_09"
    assert sorted(f.stem for f in sec.glob("*.json")) == ["Connections", "FutureDirections", "KeyFindings"]
    capsys.readouterr()
    counting = MockProvider()
    assert run(base(mock_config) + ["generate"], provider=counting) == 0
    out = capsys.readouterr().out
    assert "Themes: generated" in out and "KeyFindings: cached" in out
    assert len(counting.requests) == 1


def test_generate_regenerates_when_corpus_changes(mock_config, capsys):
    run(base(mock_config) + ["fetch"])
    run(base(mock_config) + ["generate"])
    run(base(mock_config, "finance_2024_09") + ["fetch"])
    capsys.readouterr()
    run(base(mock_config) + ["generate"])
    assert "cached" not in capsys.readouterr().out


def test_debug_payloads(mock_config):
    run(base(mock_config) + ["fetch"])
    assert run(base(mock_config) + ["--debug-payloads", "generate"]) == 0
    p = out_dir(mock_config) / "payload_2024_09_0.json"
    data = json.loads(p.read_text())
    assert list(data) == ["period", "chunk", "chunk_total", "articles"] and len(data["articles"]) == 3


def test_resolve_concept_cached(mock_config, capsys):
    url = "https://api.openalex.org/concepts?search=Finance&per-page=25"
    t = ReplayTransport([{"url": url, "status": 200,
                          "body": {"results": [{"id": "https://openalex.org/C10138342", "display_name": "Finance"}]}}])
    assert run(["--config", str(mock_config), "resolve-concept", "Finance"], transport=t) == 0
    assert run(["--config", str(mock_config), "resolve-concept", "finance"], transport=t) == 0
    assert capsys.readouterr().out.split() == ["C10138342", "C10138342"]
    assert t.call_count == 1


def test_concept_name_in_config(mock_config, capsys):
    cfg = json.loads(mock_config.read_text())
    del cfg["concept_id"]
    cfg["concept_name"] = "Finance"
    mock_config.write_text(json.dumps(cfg))
    cache = out_dir(mock_config) / "concept_cache.json"
    cache.parent.mkdir(parents=True)
    cache.write_text(json.dumps({"finance": {"id": "C10138342", "display_name": "Finance"}}))
    assert run(base(mock_config) + ["fetch"]) == 0
    assert "stored 3" in capsys.readouterr().out


@pytest.mark.parametrize("argv_extra", [["--window", "2024-13", "render"], ["--window", "2024-09", "fetch"]])
def test_bad_window(mock_config, argv_extra):
    assert run(["--config", str(mock_config)] + argv_extra) == cli.EXIT_CONFIG


def test_bad_config(tmp_path, capsys):
    bad = tmp_path / "c.json"
    bad.write_text('{"concept_id": "C1", "nonsense": 1}')
    assert run(["--config", str(bad), "fetch"]) == cli.EXIT_CONFIG
    assert "nonsense" in capsys.readouterr().err


def test_load_config_resolves_relative_paths(tmp_path):
    (tmp_path / "stop.txt").write_text("the\n")
    (tmp_path / "c.json").write_text(json.dumps({"provider": "mock", "output_dir": "o", "stopword_file": "stop.txt"}))
    cfg = load_config(tmp_path / "c.json")
    assert cfg.output_dir == tmp_path / "o" and cfg.stopword_file == tmp_path / "stop.txt"


def test_load_config_missing_file_reference(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"provider": "mock", "template_overrides": "nope.json"}))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")


def test_sqlite_store_config(mock_config):
    cfg = json.loads(mock_config.read_text())
    cfg["store_dir"] = f"sqlite:///{mock_config.parent / 'corpus.db'}"
    mock_config.write_text(json.dumps(cfg))
    assert run(base(mock_config) + ["run"]) == 0
    assert (mock_config.parent / "corpus.db").exists()
