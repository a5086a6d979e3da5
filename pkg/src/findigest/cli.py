"""Command-line entry point.

Exit codes: 0 success, 1 config error, 2 ingest/store error, 3 provider
error, 4 render error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import date

from .config import PROVIDERS, ConfigError, load_config
from .document import DocumentError, RenderError
from .ingest import IngestError
from .llm import ProviderError
from .payload import OversizedArticle
from .pipeline import GenerateFailed, Pipeline
from .store import StorageError

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_PROVIDER, EXIT_RENDER = 0, 1, 2, 3, 4


def _iso_date(value: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {value!r}") from None


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Added to the main parser and every subparser so flags work on either side
    # of the command name; SUPPRESS keeps subparsers from resetting them.
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default, help="JSON configuration file")
    p.add_argument("--run-date", type=_iso_date, default=default, help="pretend today is YYYY-MM-DD")
    p.add_argument("--window", default=default, help="target month YYYY-MM (generate/render)")
    p.add_argument("--provider", choices=PROVIDERS, default=default)
    p.add_argument("--debug-payloads", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="write payload_<YYYY>_<MM>_<chunk>.json files to the output directory")
    p.add_argument("--replay", default=default, metavar="DIR",
                   help="serve OpenAlex requests from recorded exchanges in DIR")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="findigest",
        description="Build a monthly research digest from OpenAlex abstracts.",
        parents=[_global_flags(False)],
    )
    sub = parser.add_subparsers(dest="command", required=True)
    child = [_global_flags(True)]
    sub.add_parser("fetch", parents=child, help="fetch the window's works into the store")
    sub.add_parser("generate", parents=child, help="produce the four digest sections")
    sub.add_parser("render", parents=child, help="write the PDF and Markdown digest")
    sub.add_parser("run", parents=child, help="fetch, generate and render in sequence")
    rc = sub.add_parser("resolve-concept", parents=child, help="look up an OpenAlex concept id by name")
    rc.add_argument("name")
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (IngestError, StorageError)):
        return EXIT_INGEST
    if isinstance(exc, (ProviderError, GenerateFailed, OversizedArticle)):
        return EXIT_PROVIDER
    if isinstance(exc, (DocumentError, RenderError)):
        return EXIT_RENDER
    raise exc


def _category(exc: BaseException) -> str:
    if isinstance(exc, ProviderError):
        return exc.category.value
    if isinstance(exc, GenerateFailed) and exc.failed:
        err = exc.failed[0].error
        return err.category.value if isinstance(err, ProviderError) else type(err).__name__
    if isinstance(exc, IngestError):
        return type(exc).__name__.replace("Error", "") or "Ingest"
    return type(exc).__name__


def main(argv: list[str] | None = None, **pipeline_kwargs) -> int:
    """Run the CLI. ``pipeline_kwargs`` are passed to :class:`Pipeline` (test injection)."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(
            args.config,
            provider=args.provider,
            debug_payloads=args.debug_payloads or None,
            replay_dir=args.replay,
        )
        pipe = Pipeline(config, **pipeline_kwargs)
        if args.command == "resolve-concept":
            print(pipe.resolve_concept(args.name))
            return EXIT_OK

        if args.command in ("fetch", "run") and args.window:
            raise ConfigError("--window applies to generate/render; use --run-date for fetch/run")
        try:
            window = pipe.window_for(args.run_date, args.window)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

        if args.command == "fetch":
            print(pipe.fetch(window).line())
        elif args.command == "generate":
            for s in pipe.generate(window):
                print(f"{s.kind.value}: {s.status} chunks={s.chunks} attempts={s.attempts}")
        elif args.command == "render":
            pdf, _ = pipe.render(window)
            print(pdf)
        elif args.command == "run":
            print(pipe.fetch(window).line())
            for s in pipe.generate(window):
                print(f"{s.kind.value}: {s.status} chunks={s.chunks} attempts={s.attempts}")
            pdf, _ = pipe.render(window)
            print(pdf)
    except Exception as exc:
        code = _exit_code(exc)
        print(f"error [{_category(exc)}]: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
