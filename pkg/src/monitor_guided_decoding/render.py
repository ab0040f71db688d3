"""
Plain-text rendering of mask listings and metric reports.
"""

from collections.abc import Mapping, Sequence
from typing import Any, Optional

from jinja2 import Environment, StrictUndefined, select_autoescape

from .metrics import METRICS, MetricReport
from .vocab import MaskEntry, SuggestionSet

_env = Environment(
    autoescape=select_autoescape(default_for_string=False),
    undefined=StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)

MASK_TEMPLATE = _env.from_string(
    """\
residuals ({{ residuals | length }}): {{ residuals | join(", ") if residuals else "(none)" }}
allowed tokens ({{ entries | length }} of {{ vocab_size }}):
{% for entry in entries %}
  {{ "%6d" | format(entry.token_id) }}  {{ entry.token_repr.ljust(width) }}  \
{{ entry.rule.ljust(9) }}  {{ entry.residual }}
{% endfor %}
"""
)

REPORT_TEMPLATE = _env.from_string(
    """\
{% for label, report in reports %}
{{ label }} ({{ report.case_count }} cases, n={{ report.n }})
  {{ "k".rjust(3) }}{% for metric in metrics %}  {{ metric.upper().rjust(7) }}{% endfor %}

{% for row in report.rows %}
  {{ ("%d" | format(row.k)).rjust(3) }}{% for cell in row.cells %}  {{ cell.rjust(7) }}{% endfor %}

{% endfor %}
{% if report.complexity %}
  next-identifier complexity (NIM@{{ report.top_k }}):
{% for bucket in report.complexity %}
    {{ bucket.bucket.ljust(9) }} {{ ("%d" | format(bucket.cases)).rjust(5) }} cases  \
{{ bucket.share }}  {{ bucket.nim }}
{% endfor %}
{% endif %}
{% endfor %}
{% if timing %}
wall time over {{ timing.pairs }} equal-length pairs: {{ "%.1f" | format(timing.with_monitor.mean) }} ms with monitor, \
{{ "%.1f" | format(timing.without_monitor.mean) }} ms without\
{% if timing.slowdown is not none %}, slowdown {{ "%.1f" | format(100 * timing.slowdown) }}%{% endif %}

{% endif %}
"""
)


def _percent(value: Optional[float]) -> str:
    return "-" if value is None else f"{100 * value:.2f}"


def render_mask(residuals: SuggestionSet, entries: Sequence[MaskEntry], vocab_size: int) -> str:
    """Listing of residuals and every admitted token with the rule that admitted it."""
    rows = [
        {
            "token_id": e.token_id,
            "token_repr": repr(e.token.decode("utf-8", errors="backslashreplace")),
            "rule": e.rule,
            "residual": repr(e.residual.decode("utf-8", errors="backslashreplace")),
        }
        for e in entries
    ]
    width = max((len(r["token_repr"]) for r in rows), default=0)
    names = [repr(name) if name == "" else name for name in residuals.names()]
    return MASK_TEMPLATE.render(residuals=names, entries=rows, vocab_size=vocab_size, width=width)


def render_reports(reports: Mapping[str, MetricReport], timing: Optional[Mapping[str, Any]] = None) -> str:
    """score@k tables, one per configuration, in percent."""
    views = []
    for label, report in reports.items():
        rows = [
            {"k": k, "cells": [_percent(report.aggregates[m].get(k)) for m in METRICS]} for k in report.k_values
        ]
        top_k = max(report.k_values)
        complexity = [
            {
                "bucket": b["bucket"],
                "cases": b["cases"],
                "share": f"{100 * b['share']:5.1f}%",
                "nim": _percent(b["nim"].get(str(top_k))),
            }
            for b in report.complexity
        ]
        views.append(
            (
                label,
                {
                    "case_count": len(report.per_case),
                    "n": report.n,
                    "rows": rows,
                    "top_k": top_k,
                    "complexity": complexity,
                },
            )
        )
    return REPORT_TEMPLATE.render(reports=views, metrics=METRICS, timing=timing)
