"""
Command-line interface: ``mgd complete | eval | score | derive | mask-debug | serve``.

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

import argparse
import json
import logging
import os
import sys
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Optional

from . import __version__
from .config import RunConfig, apply_overrides, load_config
from .decode import Decoder, StopReason, trial_seed
from .errors import ConfigError, MgdError
from .harness import (
    TestCase,
    aggregate_records,
    case_from_file,
    derive_file_cases,
    load_dataset,
    read_records,
    run,
    write_dataset,
)
from .lm import build_backend
from .monitor import MonitorState, update
from .render import render_mask, render_reports
from .suggest import build_provider
from .vocab import SuggestionSet, Vocabulary, explain_mask

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Flags that parse but make no sense together."""


def configure_logging(environ: Optional[Mapping[str, str]] = None) -> None:
    """Root logging to stderr at the level named by ``MGD_LOG`` (default WARNING)."""
    value = (environ if environ is not None else os.environ).get("MGD_LOG", "WARNING").strip()
    level = int(value) if value.isdigit() else logging.getLevelName(value.upper())
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected 'on' or 'off', got {value!r}")
    return value == "on"


def _k_list(value: str) -> list[int]:
    try:
        ks = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {value!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError(f"k values must be positive integers, got {value!r}")
    return ks


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgd", description="Monitor-guided decoding for code language models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    complete = commands.add_parser("complete", help="Complete one method at a dereference point")
    complete.add_argument("--config", type=Path, required=True, help="Run configuration (.toml or .json)")
    complete.add_argument("--case", type=Path, help="Dataset file holding the case")
    complete.add_argument("--case-id", help="Case to pick from --case (default: the first)")
    complete.add_argument("--workspace", type=Path, help="Repository root, with --file and --offset")
    complete.add_argument("--file", help="Source file relative to --workspace")
    complete.add_argument("--offset", type=int, help="Offset of the triggering '.' in --file")
    complete.add_argument("--monitor", type=_on_off, help="on or off (default from the configuration)")
    complete.add_argument("--seed", type=int, help="Sampling seed (default derived from the configuration seed)")
    complete.add_argument("--temperature", type=float, help="Sampling temperature (default: first of the schedule)")
    complete.add_argument("--out", type=Path, help="Write the generation record as JSON")

    evaluate = commands.add_parser("eval", help="Run a dataset and write records and a report")
    evaluate.add_argument("--dataset", type=Path, required=True, help="JSON-lines dataset")
    evaluate.add_argument("--config", type=Path, required=True, help="Run configuration (.toml or .json)")
    evaluate.add_argument("--out-dir", type=Path, required=True, help="Directory for records and reports")
    evaluate.add_argument("--resume", action="store_true", help="Skip trials already in the records file")
    evaluate.add_argument("--monitor", type=_on_off, help="on or off (default from the configuration)")
    evaluate.add_argument("--seed", type=int, help="Override the base seed")
    evaluate.add_argument("--workers", type=int, help="Override the worker count")
    evaluate.add_argument("--compare-baseline", action="store_true", default=None, help="Also run without monitor")
    evaluate.add_argument("--label", help="Configuration label in the report")

    score = commands.add_parser("score", help="Recompute score@k from a records file")
    score.add_argument("--records", type=Path, required=True, help="records.jsonl written by eval")
    score.add_argument("--k", type=_k_list, help="Comma-separated k values (default 1..n)")
    score.add_argument("--json", action="store_true", help="Print the reports as JSON")

    derive = commands.add_parser("derive", help="Cut test cases from the methods of source files")
    derive.add_argument("--workspace", type=Path, required=True, help="Repository root")
    derive.add_argument("--file", action="append", required=True, help="Source file relative to --workspace")
    derive.add_argument("--max-dots", type=int, default=10, help="Cases per method (default 10)")
    derive.add_argument("--out", type=Path, required=True, help="Dataset file to write")

    mask = commands.add_parser("mask-debug", help="Show the mask for a suggestion set")
    mask.add_argument("--vocab", type=Path, required=True, help="Vocabulary file")
    mask.add_argument("--suggestions", required=True, help="Comma-separated identifier names")
    mask.add_argument("--consumed", default="", help="Identifier text already generated after the '.'")

    serve = commands.add_parser("serve", help="Serve a configured backend as a logit server")
    serve.add_argument("--config", type=Path, required=True, help="Run configuration (.toml or .json)")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    monitor = getattr(args, "monitor", None)
    return apply_overrides(
        config,
        monitor_enabled=monitor,
        seed=getattr(args, "seed", None) if args.command == "eval" else None,
        workers=getattr(args, "workers", None),
        compare_baseline=getattr(args, "compare_baseline", None),
        label=getattr(args, "label", None),
    )


def _load_vocab(config: RunConfig) -> Vocabulary:
    if config.backend.vocab is None:
        raise ConfigError("backend needs a vocab file")
    return Vocabulary.load(config.backend.vocab)


def _select_case(args: argparse.Namespace) -> TestCase:
    if args.case is not None:
        if args.workspace is not None:
            raise UsageError("use either --case or --workspace/--file/--offset")
        cases = load_dataset(args.case)
        if args.case_id is None:
            if not cases:
                raise UsageError(f"{args.case} holds no cases")
            return cases[0]
        for case in cases:
            if case.case_id == args.case_id:
                return case
        raise UsageError(f"no case {args.case_id!r} in {args.case}")
    if args.workspace is None or args.file is None or args.offset is None:
        raise UsageError("complete needs --case or all of --workspace, --file and --offset")
    return case_from_file(args.workspace, args.file, args.offset)


def cmd_complete(args: argparse.Namespace) -> int:
    config = _load_config(args)
    case = _select_case(args)
    vocab = _load_vocab(config)
    backend = build_backend(config.backend, vocab, config.plan.total_context)
    provider = build_provider(config.provider)
    try:
        decoder = Decoder(
            backend,
            provider,
            config.plan,
            config.sampler,
            config.monitor_enabled,
            config.on_empty,
            config.provider_failure,
        )
        temperature = args.temperature if args.temperature is not None else config.schedule[0]
        seed = args.seed if args.seed is not None else trial_seed(config.seed, case.case_id, 0)
        record = decoder.generate(case, 0, temperature, seed)
    finally:
        provider.close()
    if args.out is not None:
        args.out.write_text(json.dumps(record.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(record.text)
    if record.stop_reason is StopReason.ERROR:
        print(f"generation failed ({record.stop_reason.value}): {record.error}", file=sys.stderr)
        return EXIT_FAILURE
    if record.stop_reason is StopReason.ABANDONED:
        print("generation abandoned: no suggestions at a dereference", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args)
    dataset = load_dataset(args.dataset)
    result = run(config, dataset, args.out_dir, resume=args.resume)
    print(render_reports(result.reports, result.timing), end="")
    print(f"records: {result.records_path}")
    print(f"report:  {result.report_path}")
    print(f"csv:     {result.csv_path}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    records = read_records(args.records)
    if not records:
        print(f"no records in {args.records}", file=sys.stderr)
        return EXIT_FAILURE
    try:
        reports = aggregate_records(records, args.k)
    except ValueError as e:
        raise UsageError(str(e)) from e
    if args.json:
        print(json.dumps({label: report.to_dict() for label, report in reports.items()}, indent=2))
    else:
        print(render_reports(reports), end="")
    return EXIT_OK


def cmd_derive(args: argparse.Namespace) -> int:
    if args.max_dots < 1:
        raise UsageError(f"--max-dots must be >= 1, got {args.max_dots}")
    cases = []
    for file in args.file:
        found = derive_file_cases(args.workspace, file, args.max_dots)
        logger.info("%s: %d cases", file, len(found))
        cases.extend(found)
    write_dataset(cases, args.out)
    print(f"{len(cases)} cases written to {args.out}")
    return EXIT_OK


def cmd_mask_debug(args: argparse.Namespace) -> int:
    vocab = Vocabulary.load(args.vocab)
    names = [name.strip() for name in args.suggestions.split(",") if name.strip()]
    state = MonitorState.active(SuggestionSet.from_names(names)) if names else MonitorState.wait()
    if state.is_wait:
        print("no suggestions given", file=sys.stderr)
        return EXIT_FAILURE
    if args.consumed:
        state = update(state, args.consumed)
        if not state.is_active:
            print(f"consumed text {args.consumed!r} ends the identifier with a delimiter", file=sys.stderr)
            return EXIT_FAILURE
    print(render_mask(state.residuals, explain_mask(state.residuals, vocab), vocab.size), end="")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        import uvicorn

        from .server import create_logit_app
    except ImportError:
        print("serve needs the 'server' extra: pip install 'monitor-guided-decoding[server]'", file=sys.stderr)
        return EXIT_FAILURE
    config = load_config(args.config)
    backend = build_backend(config.backend, _load_vocab(config), config.plan.total_context)
    uvicorn.run(create_logit_app(backend), host=args.host, port=args.port)
    return EXIT_OK


COMMANDS = {
    "complete": cmd_complete,
    "eval": cmd_eval,
    "score": cmd_score,
    "derive": cmd_derive,
    "mask-debug": cmd_mask_debug,
    "serve": cmd_serve,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        print(f"mgd {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except MgdError as e:
        print(f"mgd {args.command}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
