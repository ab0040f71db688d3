"""Tests for plain-text rendering."""

import pytest

from monitor_guided_decoding.metrics import MetricReport, TrialScores, build_report
from monitor_guided_decoding.render import render_mask, render_reports
from monitor_guided_decoding.vocab import SuggestionSet, Vocabulary, explain_mask


@pytest.fixture
def report() -> MetricReport:
    scores = [
        TrialScores("a", cr=[1, 1], nim=[1, 0], ism=[1.0, 0.0], pm=[1.0, 0.5], complexity=1.0),
        TrialScores("b", cr=[1, 0], nim=[0, 0], ism=[0.5, 0.5], pm=[0.5, 0.5], complexity=2.5),
    ]
    return build_report(scores, label="mgd")


class TestRenderReports:
    """Test the score@k tables."""

    def test_table(self, report: MetricReport) -> None:
        """Test header and one row per k, in percent."""
        lines = render_reports({"mgd": report}).splitlines()
        assert lines[:4] == [
            "mgd (2 cases, n=2)",
            "    k       CR      NIM      ISM       PM",
            "    1    75.00    25.00    50.00    62.50",
            "    2   100.00    50.00    75.00    75.00",
        ]

    def test_complexity_buckets(self, report: MetricReport) -> None:
        """Test the per-bucket NIM at the largest k."""
        text = render_reports({"mgd": report})
        assert "  next-identifier complexity (NIM@2):\n" in text
        assert "    [1, 2)        1 cases   50.0%  100.00\n" in text
        assert "    [2, 3)        1 cases   50.0%  0.00\n" in text
        assert "    [4, 18)       0 cases    0.0%  -\n" in text

    def test_timing(self, report: MetricReport) -> None:
        """Test the wall-time line with and without a slowdown."""
        timing = {"pairs": 3, "with_monitor": {"mean": 12.34}, "without_monitor": {"mean": 10.0}, "slowdown": 0.234}
        text = render_reports({"mgd": report}, timing)
        assert text.endswith(
            "wall time over 3 equal-length pairs: 12.3 ms with monitor, 10.0 ms without, slowdown 23.4%\n"
        )
        text = render_reports({"mgd": report}, {**timing, "slowdown": None})
        assert text.endswith("10.0 ms without\n")


class TestRenderMask:
    """Test the mask listing."""

    def test_listing(self, vocab: Vocabulary) -> None:
        """Test that each admitted token appears once with its residual."""
        residuals = SuggestionSet.from_names(["withIp", "withPort"])
        entries = explain_mask(residuals, vocab)
        text = render_mask(residuals, entries, vocab.size)
        lines = text.splitlines()
        assert lines[0] == "residuals (2): withIp, withPort"
        assert lines[1] == f"allowed tokens ({len(entries)} of {vocab.size}):"
        assert len(lines) == 2 + len(entries)
        assert any("'with'" in line for line in lines[2:])
        assert not any("'host'" in line for line in lines[2:])
