"""
Completion metrics, score@k and identifier complexity.

NIM, ISM and PM compare the generated continuation with the ground-truth
remainder of the method token by token; CR splices the continuation into the
repository and runs a build.
"""

import csv
import io
import logging
import shlex
import statistics
import subprocess  # nosec B404
import threading
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path
from typing import TYPE_CHECKING, Any, Optional, Union

import numpy as np

from .javalex import identifiers, lex, truncate_at_method_close
from .vocab import Vocabulary

if TYPE_CHECKING:
    from .decode import GenerationRecord
    from .harness import TestCase

logger = logging.getLogger(__name__)

METRICS = ("cr", "nim", "ism", "pm")


def _common_prefix(a: Sequence[Any], b: Sequence[Any]) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


def _token_stream(source: str) -> list[tuple[str, str]]:
    return [(token.kind.value, token.text) for token in lex(source)]


def nim(ground_truth: str, generated: str) -> int:
    """Next identifier match: 1 iff the first Java tokens agree in kind and text."""
    expected = _token_stream(ground_truth)
    actual = _token_stream(generated)
    return int(bool(expected) and bool(actual) and expected[0] == actual[0])


def ism(ground_truth: str, generated: str, open_depth: int = 1) -> float:
    """Identifier sequence match: common identifier prefix over ground-truth identifiers."""
    expected = identifiers(ground_truth)
    if not expected:
        return 1.0
    actual = identifiers(truncate_at_method_close(generated, open_depth))
    return _common_prefix(expected, actual) / len(expected)


def pm(ground_truth: str, generated: str, open_depth: int = 1) -> float:
    """Prefix match: common token prefix over ground-truth tokens."""
    expected = _token_stream(ground_truth)
    if not expected:
        return 1.0
    actual = _token_stream(truncate_at_method_close(generated, open_depth))
    return _common_prefix(expected, actual) / len(expected)


@dataclass(frozen=True)
class CompileOutcome:
    """CR value (1, 0, or None when no build ran) and why."""

    value: Optional[int]
    reason: str
    detail: str = ""


_workspace_locks: dict[Path, threading.Lock] = {}
_workspace_locks_guard = threading.Lock()


def _workspace_lock(root: Path) -> threading.Lock:
    with _workspace_locks_guard:
        return _workspace_locks.setdefault(root.resolve(), threading.Lock())


def compile_check(
    case: "TestCase",
    generated: str,
    build_command: Union[str, Sequence[str], None],
    timeout_s: float = 600.0,
) -> CompileOutcome:
    """
    Splice ``generated`` over the ground truth in the case's file and build.

    The file is restored afterwards whatever happens. Builds in one workspace
    run one at a time.
    """
    if not build_command:
        return CompileOutcome(None, "not_configured")
    command = shlex.split(build_command) if isinstance(build_command, str) else list(build_command)
    root = Path(case.workspace_root)
    path = root / case.file
    if not path.is_file():
        return CompileOutcome(None, "not_configured", f"missing source file {path}")

    body = truncate_at_method_close(generated, case.open_depth)
    with _workspace_lock(root):
        original = path.read_bytes()
        try:
            text = original.decode("utf-8")
        except UnicodeDecodeError as e:
            logger.warning("cannot splice %s: %s is not UTF-8 (%s)", case.case_id, path, e)
            return CompileOutcome(None, "splice_failed", f"{case.file} is not UTF-8")
        start = case.dot_offset + 1
        end = start + len(case.ground_truth)
        if text[: case.dot_offset + 1] != case.prefix or text[start:end] != case.ground_truth:
            logger.warning("ground truth of %s not found at offset %d in %s", case.case_id, start, path)
            return CompileOutcome(None, "splice_failed", f"ground truth not at offset {start} of {case.file}")
        try:
            path.write_text(text[:start] + body + text[end:], encoding="utf-8")
            completed = subprocess.run(  # nosec B603
                command, cwd=root, capture_output=True, timeout=timeout_s, check=False
            )
        except subprocess.TimeoutExpired:
            logger.warning("build for %s timed out after %.0fs", case.case_id, timeout_s)
            return CompileOutcome(0, "timeout", f"build exceeded {timeout_s}s")
        except OSError as e:
            return CompileOutcome(0, "build_failed", f"cannot run {command[0]}: {e}")
        finally:
            path.write_bytes(original)
    if completed.returncode == 0:
        return CompileOutcome(1, "ok")
    detail = completed.stderr.decode("utf-8", errors="replace")[-2000:]
    return CompileOutcome(0, "build_failed", detail)


def cr(
    case: "TestCase", generated: str, build_command: Union[str, Sequence[str], None], timeout_s: float = 600.0
) -> Optional[int]:
    """Compilation rate for one generation: 1, 0, or None when no build is configured."""
    return compile_check(case, generated, build_command, timeout_s).value


def score_at_k(scores: Sequence[float], k: int) -> float:
    """
    Expected best score among ``k`` of the ``n`` trials.

    Computed in exact arithmetic as
    ``sum_i C(n - i, k - 1) * s_(i) / C(n, k)`` over scores sorted descending.

    Raises:
        ValueError: If ``k`` is not in ``1..n``
    """
    n = len(scores)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in 1..{n}, got {k}")
    ordered = sorted((Fraction(s) for s in scores), reverse=True)
    total = sum((comb(n - i, k - 1) * s for i, s in enumerate(ordered, start=1)), Fraction(0))
    return float(total / comb(n, k))


def pass_at_k(n: int, c: int, k: int) -> float:
    """Closed-form pass@k for ``c`` successes out of ``n``."""
    if not 1 <= k <= n or not 0 <= c <= n:
        raise ValueError(f"need 1 <= k <= n and 0 <= c <= n, got n={n}, c={c}, k={k}")
    return float(1 - Fraction(comb(n - c, k), comb(n, k)))


Tokenizer = Union[Vocabulary, Callable[[str], Sequence[int]]]


def identifier_complexity(name: str, tokenizers: Sequence[Tokenizer]) -> float:
    """Mean number of subtokens ``name`` encodes to across ``tokenizers``."""
    if not tokenizers:
        raise ValueError("identifier complexity needs at least one tokenizer")
    counts = []
    for tokenizer in tokenizers:
        encode = tokenizer.tokenize_greedy if isinstance(tokenizer, Vocabulary) else tokenizer
        counts.append(len(encode(name)))
    return sum(counts) / len(counts)


@dataclass(frozen=True)
class ComplexityBucket:
    """Half-open interval ``[low, high)`` of mean subtoken counts."""

    low: float
    high: float

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise ValueError(f"empty bucket [{self.low}, {self.high})")

    def __contains__(self, value: float) -> bool:
        return self.low <= value < self.high

    @property
    def label(self) -> str:
        return f"[{self.low:g}, {self.high:g})"


DEFAULT_BUCKETS = (
    ComplexityBucket(1, 2),
    ComplexityBucket(2, 3),
    ComplexityBucket(3, 4),
    ComplexityBucket(4, 18),
)


def bucket_for(value: float, buckets: Sequence[ComplexityBucket] = DEFAULT_BUCKETS) -> Optional[ComplexityBucket]:
    for bucket in buckets:
        if value in bucket:
            return bucket
    return None


@dataclass
class TrialScores:
    """Per-trial metric values of one case."""

    case_id: str
    cr: list[Optional[int]] = field(default_factory=list)
    nim: list[int] = field(default_factory=list)
    ism: list[float] = field(default_factory=list)
    pm: list[float] = field(default_factory=list)
    complexity: Optional[float] = None

    def __post_init__(self) -> None:
        n = len(self.nim)
        if not len(self.cr) == len(self.ism) == len(self.pm) == n:
            raise ValueError(f"trial score lists of {self.case_id} differ in length")
        for name in ("ism", "pm"):
            if any(not 0.0 <= v <= 1.0 for v in getattr(self, name)):
                raise ValueError(f"{name} of {self.case_id} outside [0, 1]")

    @property
    def n(self) -> int:
        return len(self.nim)

    def values(self, metric: str) -> Optional[list[float]]:
        """Scores of one metric, or None for CR when no build ran for every trial."""
        raw = getattr(self, metric)
        if any(v is None for v in raw):
            return None
        return [float(v) for v in raw]


@dataclass
class MetricReport:
    """Aggregated score@k per metric, plus per-bucket NIM."""

    label: str
    n: int
    k_values: list[int]
    aggregates: dict[str, dict[int, Optional[float]]]
    case_counts: dict[str, int]
    complexity: list[dict[str, Any]]
    per_case: list[TrialScores]

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "n": self.n,
            "k_values": list(self.k_values),
            "aggregates": {m: {str(k): v for k, v in by_k.items()} for m, by_k in self.aggregates.items()},
            "case_counts": dict(self.case_counts),
            "complexity": self.complexity,
            "per_case": [
                {"case_id": s.case_id, "cr": s.cr, "nim": s.nim, "ism": s.ism, "pm": s.pm, "complexity": s.complexity}
                for s in self.per_case
            ],
        }


def build_report(
    scores: Sequence[TrialScores],
    k_values: Optional[Iterable[int]] = None,
    label: str = "",
    buckets: Sequence[ComplexityBucket] = DEFAULT_BUCKETS,
) -> MetricReport:
    """
    Aggregate per-case trial scores.

    Each metric's score@k is the mean over cases of the case's score@k. CR
    averages only over cases where a build ran.

    Raises:
        ValueError: If there are no cases or some k exceeds a case's trial count
    """
    if not scores:
        raise ValueError("cannot build a report from zero cases")
    n = min(s.n for s in scores)
    ks = sorted(set(k_values)) if k_values is not None else list(range(1, n + 1))
    for k in ks:
        if not 1 <= k <= n:
            raise ValueError(f"k={k} outside 1..{n} (trials per case)")

    aggregates: dict[str, dict[int, Optional[float]]] = {}
    case_counts: dict[str, int] = {}
    for metric in METRICS:
        per_case = [v for v in (s.values(metric) for s in scores) if v is not None]
        case_counts[metric] = len(per_case)
        aggregates[metric] = {
            k: (sum(score_at_k(v, k) for v in per_case) / len(per_case) if per_case else None) for k in ks
        }

    complexity = []
    for bucket in buckets:
        members = [s for s in scores if s.complexity is not None and s.complexity in bucket]
        nim_by_k = {
            str(k): (sum(score_at_k([float(x) for x in s.nim], k) for s in members) / len(members) if members else None)
            for k in ks
        }
        complexity.append(
            {
                "bucket": bucket.label,
                "cases": len(members),
                "share": len(members) / len(scores),
                "nim": nim_by_k,
            }
        )
    return MetricReport(label, n, ks, aggregates, case_counts, complexity, list(scores))


def _five_numbers(values: Sequence[float]) -> dict[str, float]:
    data = np.asarray(values, dtype=np.float64)
    q1, median, q3 = np.percentile(data, [25, 50, 75])
    return {
        "count": int(data.size),
        "mean": float(data.mean()),
        "stdev": statistics.stdev(values) if len(values) > 1 else 0.0,
        "min": float(data.min()),
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "max": float(data.max()),
    }


def timing_summary(
    with_monitor: Iterable["GenerationRecord"], without_monitor: Iterable["GenerationRecord"]
) -> Optional[dict[str, Any]]:
    """
    Wall-time statistics for paired monitor-on/off trials.

    Only pairs (same case and trial) that generated the same number of tokens
    count. Returns None when no pair qualifies.
    """
    off = {(r.case_id, r.trial_index): r for r in without_monitor}
    on_times, off_times = [], []
    for record in with_monitor:
        other = off.get((record.case_id, record.trial_index))
        if other is not None and other.generated_tokens == record.generated_tokens:
            on_times.append(record.wall_time_ms)
            off_times.append(other.wall_time_ms)
    if not on_times:
        return None
    summary_on, summary_off = _five_numbers(on_times), _five_numbers(off_times)
    slowdown = (summary_on["mean"] - summary_off["mean"]) / summary_off["mean"] if summary_off["mean"] > 0 else None
    return {"pairs": len(on_times), "with_monitor": summary_on, "without_monitor": summary_off, "slowdown": slowdown}


def report_to_csv(reports: Mapping[str, MetricReport], k: Optional[int] = None) -> str:
    """One row per configuration: CR, NIM, ISM, PM score@k in percent."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["configuration", "k", "CR", "NIM", "ISM", "PM"])
    for label, report in reports.items():
        at = k if k is not None else max(report.k_values)
        row: list[Any] = [label, at]
        for metric in METRICS:
            value = report.aggregates[metric].get(at)
            row.append("" if value is None else f"{100 * value:.2f}")
        writer.writerow(row)
    return buffer.getvalue()
