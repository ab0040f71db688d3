"""
Evaluation harness: test cases, dataset loading, case derivation and batch runs.

A run writes ``records.jsonl`` (one line per trial, appended as trials
finish) and then derives ``report.json`` and ``report.csv`` from the records
file alone, so an interrupted run can be resumed and re-aggregated.
"""

import json
import logging
import threading
from collections import defaultdict
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Union

from .config import RunConfig, config_hash
from .decode import Decoder, GenerationRecord, StopReason
from .errors import ConfigError, DatasetError, MgdError, PromptError
from .javalex import JavaToken, TokenKind, brace_depth, identifiers, lex, method_close_offset
from .lm import build_backend
from .metrics import (
    MetricReport,
    TrialScores,
    build_report,
    compile_check,
    identifier_complexity,
    ism,
    nim,
    pm,
    report_to_csv,
    timing_summary,
)
from .monitor import dereference_points
from .suggest import SuggestionProvider, build_provider
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

RECORDS_FILE = "records.jsonl"
REPORT_FILE = "report.json"
CSV_FILE = "report.csv"


@dataclass
class TestCase:
    """
    A method-completion task anchored at a dereference.

    ``prefix`` is the file text up to and including the triggering '.', so
    ``dot_offset == len(prefix) - 1``. ``ground_truth`` runs from just after
    the '.' to the method's closing brace and ``suffix`` is the file text
    after that brace.
    """

    __test__ = False  # not a pytest class

    case_id: str
    workspace_root: Path
    file: str
    prefix: str
    ground_truth: str
    dot_offset: int
    open_depth: int
    suffix: Optional[str] = None
    class_expr_type_files: list[str] = field(default_factory=list)
    class_expr_type_contents: Optional[list[str]] = None

    def __post_init__(self) -> None:
        self.workspace_root = Path(self.workspace_root)
        if not self.case_id:
            raise ValueError("case_id must not be empty")
        if not self.prefix.endswith("."):
            raise ValueError("prefix must end with '.'")
        if self.dot_offset != len(self.prefix) - 1:
            raise ValueError(
                f"dot_offset {self.dot_offset} is not the final '.' of the prefix (at {len(self.prefix) - 1})"
            )
        if self.open_depth < 1:
            raise ValueError(f"open_depth must be >= 1, got {self.open_depth}")
        if method_close_offset(self.ground_truth, self.open_depth) is None:
            raise ValueError(f"ground_truth never closes the method at depth {self.open_depth}")

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: Union[str, Path] = ".") -> "TestCase":
        """Build a case from its dataset line; a relative workspace root is resolved against ``base_dir``."""
        required = ("case_id", "file", "prefix", "ground_truth", "dot_offset", "open_depth")
        missing = [name for name in required if name not in data]
        if missing:
            raise ValueError(f"missing field(s): {', '.join(missing)}")
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown field(s): {', '.join(unknown)}")
        for name in ("dot_offset", "open_depth"):
            if not isinstance(data[name], int) or isinstance(data[name], bool):
                raise ValueError(f"{name} must be an integer")
        for name in ("case_id", "file", "prefix", "ground_truth"):
            if not isinstance(data[name], str):
                raise ValueError(f"{name} must be a string")
        values = dict(data)
        values["workspace_root"] = Path(base_dir) / values.get("workspace_root", ".")
        return cls(**values)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "case_id": self.case_id,
            "workspace_root": str(self.workspace_root),
            "file": self.file,
            "prefix": self.prefix,
            "ground_truth": self.ground_truth,
            "dot_offset": self.dot_offset,
            "open_depth": self.open_depth,
        }
        if self.suffix is not None:
            data["suffix"] = self.suffix
        if self.class_expr_type_files:
            data["class_expr_type_files"] = list(self.class_expr_type_files)
        if self.class_expr_type_contents is not None:
            data["class_expr_type_contents"] = list(self.class_expr_type_contents)
        return data

    @property
    def file_path(self) -> Path:
        return self.workspace_root / self.file

    @property
    def file_uri(self) -> str:
        return self.file_path.resolve().as_uri()

    @property
    def next_identifier(self) -> Optional[str]:
        """The identifier the model should produce right after the '.'."""
        names = identifiers(self.ground_truth)
        return names[0] if names else None

    def class_expr_type_text(self) -> Optional[str]:
        """
        Text of the files defining the types used in the enclosing class.

        Embedded contents win over files; None when the case lists neither.

        Raises:
            PromptError: If a listed file cannot be read
        """
        contents = self.class_expr_type_contents
        if contents is None:
            if not self.class_expr_type_files:
                return None
            contents = []
            for relpath in self.class_expr_type_files:
                try:
                    contents.append((self.workspace_root / relpath).read_text(encoding="utf-8"))
                except OSError as e:
                    raise PromptError(f"cannot read classExprTypes file {relpath} of {self.case_id}: {e}") from e
        if not contents:
            return None
        return "\n".join(contents) + "\n"


def load_dataset(path: Union[str, Path]) -> list[TestCase]:
    """
    Read a JSON-lines dataset; blank lines are skipped.

    Raises:
        DatasetError: Listing every offending line
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DatasetError([(0, f"cannot read file: {e}")], str(path)) from e

    cases: list[TestCase] = []
    problems: list[tuple[int, str]] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            if not isinstance(data, dict):
                raise ValueError("line must hold a JSON object")
            case = TestCase.from_dict(data, path.parent)
        except (ValueError, TypeError) as e:
            problems.append((lineno, str(e)))
            continue
        if case.case_id in seen:
            problems.append((lineno, f"duplicate case_id {case.case_id!r} (first on line {seen[case.case_id]})"))
            continue
        seen[case.case_id] = lineno
        cases.append(case)
    if problems:
        raise DatasetError(problems, str(path))
    logger.info("loaded %d test cases from %s", len(cases), path)
    return cases


def write_dataset(cases: Iterable[TestCase], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for case in cases:
            f.write(json.dumps(case.to_dict(), ensure_ascii=False) + "\n")


def select_uniform(n: int, max_count: int) -> list[int]:
    """Up to ``max_count`` indices into ``range(n)``, evenly strided: ``floor(i * n / max_count)``."""
    if max_count < 1:
        raise ValueError(f"max_count must be >= 1, got {max_count}")
    return sorted({i * n // max_count for i in range(max_count)}) if n else []


def derive_cases(
    method_source: str,
    file: str,
    workspace_root: Union[str, Path],
    max_dots: int = 10,
    *,
    before: str = "",
    after: str = "",
) -> list[TestCase]:
    """
    Cut test cases out of one method.

    Every dereferencing '.' inside the method body qualifies; up to
    ``max_dots`` of them are picked evenly by index. ``before`` and ``after``
    are the file text around the method, so offsets are file offsets.
    """
    qualifying = []
    for dot in dereference_points(method_source):
        depth = brace_depth(method_source[: dot + 1])
        if depth < 1:
            continue
        rest = method_source[dot + 1 :]
        close = method_close_offset(rest, depth)
        if close is None:
            continue
        qualifying.append((dot, depth, rest[:close], rest[close:]))

    cases = []
    for index in select_uniform(len(qualifying), max_dots):
        dot, depth, ground_truth, tail = qualifying[index]
        offset = len(before) + dot
        cases.append(
            TestCase(
                case_id=f"{file}:{offset}",
                workspace_root=Path(workspace_root),
                file=file,
                prefix=before + method_source[: dot + 1],
                ground_truth=ground_truth,
                dot_offset=offset,
                open_depth=depth,
                suffix=tail + after,
            )
        )
    return cases


def _opening_paren(tokens: Sequence[JavaToken], close: int) -> Optional[int]:
    depth = 0
    for i in range(close, -1, -1):
        text = tokens[i].text if tokens[i].kind is TokenKind.PUNCTUATOR else ""
        if text == ")":
            depth += 1
        elif text == "(":
            depth -= 1
            if depth == 0:
                return i
    return None


def method_body_spans(source: str) -> list[tuple[int, int]]:
    """
    (start, end) of every method or constructor body in ``source``.

    A body is a '{' inside a type, outside any other body, that follows a
    parameter list (optionally with a ``throws`` clause). ``start`` is the
    offset of the '{' and ``end`` is one past its matching '}'.
    """
    tokens = lex(source)
    spans: list[tuple[int, int]] = []
    for i, token in enumerate(tokens):
        if token.kind is not TokenKind.PUNCTUATOR or token.text != "{":
            continue
        if spans and token.offset < spans[-1][1]:
            continue
        if brace_depth(source[: token.offset]) < 1:
            continue
        j = i - 1
        if j >= 0 and tokens[j].text != ")":
            # skip a throws clause: names, dots and commas back to the keyword
            while j >= 0 and (tokens[j].kind is TokenKind.IDENTIFIER or tokens[j].text in (".", ",")):
                j -= 1
            if j < 0 or tokens[j].text != "throws":
                continue
            j -= 1
        if j < 0 or tokens[j].text != ")":
            continue
        opening = _opening_paren(tokens, j)
        if opening is None or opening == 0 or tokens[opening - 1].kind is not TokenKind.IDENTIFIER:
            continue
        if opening >= 2 and tokens[opening - 2].text in ("new", "."):
            continue
        end = method_close_offset(source[token.offset + 1 :], 1)
        if end is not None:
            spans.append((token.offset, token.offset + 1 + end))
    return spans


def derive_file_cases(workspace_root: Union[str, Path], file: str, max_dots: int = 10) -> list[TestCase]:
    """Cases for every method body of one file, up to ``max_dots`` per method."""
    root = Path(workspace_root)
    try:
        text = (root / file).read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetError([(0, f"cannot read {file}: {e}")], str(root)) from e
    cases = []
    for start, end in method_body_spans(text):
        cases.extend(derive_cases(text[start:end], file, root, max_dots, before=text[:start], after=text[end:]))
    return cases


def case_from_file(workspace_root: Union[str, Path], file: str, offset: int) -> TestCase:
    """
    Cut one case from a source file at the '.' at ``offset``.

    The brace enclosing the class is not part of the method, so the open
    depth is the depth at the '.' minus one (at least 1).
    """
    root = Path(workspace_root)
    try:
        text = (root / file).read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetError([(0, f"cannot read {file}: {e}")], str(root)) from e
    if not 0 <= offset < len(text) or text[offset] != ".":
        raise DatasetError([(0, f"no '.' at offset {offset} of {file}")], str(root))
    prefix = text[: offset + 1]
    open_depth = max(brace_depth(prefix) - 1, 1)
    rest = text[offset + 1 :]
    close = method_close_offset(rest, open_depth)
    if close is None:
        raise DatasetError([(0, f"method around offset {offset} of {file} never closes")], str(root))
    return TestCase(f"{file}:{offset}", root, file, prefix, rest[:close], offset, open_depth, suffix=rest[close:])


def score_record(
    case: TestCase,
    record: GenerationRecord,
    build_command: Union[str, Sequence[str], None] = None,
    timeout_s: float = 600.0,
) -> dict[str, Any]:
    """NIM, ISM, PM and CR of one generation; an abandoned generation scores zero."""
    if record.stop_reason is StopReason.ABANDONED:
        return {
            "cr": 0 if build_command else None,
            "cr_reason": "abandoned" if build_command else "not_configured",
            "nim": 0,
            "ism": 0.0,
            "pm": 0.0,
        }
    outcome = compile_check(case, record.text, build_command, timeout_s)
    return {
        "cr": outcome.value,
        "cr_reason": outcome.reason,
        "nim": nim(case.ground_truth, record.text),
        "ism": ism(case.ground_truth, record.text, case.open_depth),
        "pm": pm(case.ground_truth, record.text, case.open_depth),
    }


@dataclass
class RecordLine:
    """One line of ``records.jsonl``."""

    config_label: str
    config_hash: str
    case_id: str
    trial_index: int
    record: GenerationRecord
    scores: dict[str, Any]
    next_identifier: Optional[str] = None
    complexity: Optional[float] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_label": self.config_label,
            "config_hash": self.config_hash,
            "case_id": self.case_id,
            "trial_index": self.trial_index,
            "record": self.record.to_dict(),
            "scores": self.scores,
            "next_identifier": self.next_identifier,
            "complexity": self.complexity,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RecordLine":
        values = dict(data)
        values["record"] = GenerationRecord.from_dict(values["record"])
        return cls(**values)


def read_records(path: Union[str, Path]) -> list[RecordLine]:
    """
    Parse a records file.

    A truncated final line, left by an interrupted run, is skipped with a
    warning; any other malformed line is an error.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DatasetError([(0, f"cannot read file: {e}")], str(path)) from e
    records = []
    problems = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(RecordLine.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as e:
            if lineno == len(lines):
                logger.warning("ignoring truncated last line of %s", path)
                continue
            problems.append((lineno, f"malformed record: {e}"))
    if problems:
        raise DatasetError(problems, str(path))
    return records


def aggregate_records(
    records: Iterable[RecordLine],
    k_values: Optional[Iterable[int]] = None,
    config_hashes: Optional[Iterable[str]] = None,
) -> dict[str, MetricReport]:
    """
    One MetricReport per configuration label, computed from record lines alone.

    Cases and trials are ordered by id and index, so the result does not
    depend on the order trials finished in.
    """
    wanted = set(config_hashes) if config_hashes is not None else None
    grouped: dict[str, dict[str, dict[int, RecordLine]]] = defaultdict(lambda: defaultdict(dict))
    for line in records:
        if wanted is not None and line.config_hash not in wanted:
            continue
        grouped[line.config_label][line.case_id][line.trial_index] = line

    reports = {}
    for label in sorted(grouped):
        per_case = []
        for case_id in sorted(grouped[label]):
            trials = [grouped[label][case_id][i] for i in sorted(grouped[label][case_id])]
            per_case.append(
                TrialScores(
                    case_id=case_id,
                    cr=[t.scores.get("cr") for t in trials],
                    nim=[int(t.scores["nim"]) for t in trials],
                    ism=[float(t.scores["ism"]) for t in trials],
                    pm=[float(t.scores["pm"]) for t in trials],
                    complexity=trials[0].complexity,
                )
            )
        reports[label] = build_report(per_case, k_values, label)
    return reports


@dataclass
class RunResult:
    """Paths written by a run and the reports they hold."""

    records_path: Path
    report_path: Path
    csv_path: Path
    reports: dict[str, MetricReport]
    timing: Optional[dict[str, Any]] = None
    new_records: int = 0


def _completed(path: Path) -> set[tuple[str, str, int]]:
    return {(line.config_hash, line.case_id, line.trial_index) for line in read_records(path)}


def _drop_partial_line(path: Path) -> None:
    # appends must start on a fresh line
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        path.write_bytes(data[: data.rfind(b"\n") + 1])
        logger.warning("dropped truncated last line of %s", path)


def run(
    config: RunConfig,
    dataset: Sequence[TestCase],
    out_dir: Union[str, Path],
    resume: bool = False,
    provider: Optional[SuggestionProvider] = None,
) -> RunResult:
    """
    Evaluate every configuration of ``config`` over ``dataset``.

    With ``resume``, trials already in the records file under the same
    configuration hash are skipped. Failing trials are recorded, never raised.

    Raises:
        ConfigError: If the dataset is empty or the vocabulary is not configured
    """
    if not dataset:
        raise ConfigError("dataset is empty")
    if config.backend.vocab is None:
        raise ConfigError("backend needs a vocab file")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records_path = out / RECORDS_FILE

    vocab = Vocabulary.load(config.backend.vocab)
    tokenizers = [vocab, *(Vocabulary.load(p) for p in config.complexity_vocabs)]
    backend = build_backend(config.backend, vocab, config.plan.total_context)
    owns_provider = provider is None
    active_provider = provider if provider is not None else build_provider(config.provider)

    done: set[tuple[str, str, int]] = set()
    if resume and records_path.exists():
        _drop_partial_line(records_path)
        done = _completed(records_path)
        logger.info("resuming: %d trials already recorded", len(done))
    elif records_path.exists():
        records_path.unlink()

    hashes = {}
    jobs = []
    for label, enabled in config.configurations:
        digest = config_hash(replace(config, monitor_enabled=enabled, compare_baseline=False))
        hashes[label] = digest
        decoder = Decoder(
            backend,
            active_provider,
            config.plan,
            config.sampler,
            enabled,
            config.on_empty,
            config.provider_failure,
        )
        for case in dataset:
            missing = [i for i in range(config.n_trials) if (digest, case.case_id, i) not in done]
            if missing:
                jobs.append((label, digest, decoder, case, missing))

    write_lock = threading.Lock()
    written = 0

    def evaluate(job: tuple[str, str, Decoder, TestCase, list[int]]) -> None:
        nonlocal written
        label, digest, decoder, case, indices = job
        name = case.next_identifier
        complexity = identifier_complexity(name, tokenizers) if name else None
        try:
            records = decoder.run_trials(case, config.schedule, config.seed, 1, indices)
        except MgdError as e:
            logger.error("case %s failed under %s: %s", case.case_id, label, e)
            return
        for record in records:
            scores = score_record(case, record, config.build_command, config.build_timeout_s)
            line = RecordLine(label, digest, case.case_id, record.trial_index, record, scores, name, complexity)
            with write_lock:
                with open(records_path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(line.to_dict(), ensure_ascii=False) + "\n")
                written += 1

    try:
        logger.info("running %d jobs over %d cases with %d workers", len(jobs), len(dataset), config.workers)
        if config.workers <= 1:
            for job in jobs:
                evaluate(job)
        else:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                list(pool.map(evaluate, jobs))
    finally:
        if owns_provider:
            active_provider.close()
        close = getattr(backend, "close", None)
        if close is not None:
            close()

    lines = read_records(records_path) if records_path.exists() else []
    wanted = set(hashes.values())
    lines = [line for line in lines if line.config_hash in wanted]
    if not lines:
        raise ConfigError("run produced no records")
    reports = aggregate_records(lines, range(1, (config.k_max or config.n_trials) + 1))
    timing = None
    if "mgd" in reports and "baseline" in reports:
        by_label: dict[str, list[GenerationRecord]] = defaultdict(list)
        for line in lines:
            by_label[line.config_label].append(line.record)
        timing = timing_summary(by_label["mgd"], by_label["baseline"])

    report_path = out / REPORT_FILE
    csv_path = out / CSV_FILE
    document = {
        "records": RECORDS_FILE,
        "config_hash": hashes,
        "n_trials": config.n_trials,
        "k_max": config.k_max,
        "reports": {label: report.to_dict() for label, report in reports.items()},
        "timing": timing,
    }
    report_path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    csv_path.write_text(report_to_csv(reports, config.k_max), encoding="utf-8")
    logger.info("wrote %d new records; report at %s", written, report_path)
    return RunResult(records_path, report_path, csv_path, reports, timing, written)
