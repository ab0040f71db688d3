"""Tests for the mgd command line."""

import json
import logging
from pathlib import Path
from unittest.mock import patch

import pytest
from conftest import CLUSTER_FILE, RunFiles, dot_offsets

from monitor_guided_decoding import __version__
from monitor_guided_decoding.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, configure_logging, main
from monitor_guided_decoding.harness import load_dataset


class TestComplete:
    """Test single completions."""

    def test_from_dataset(self, run_files: RunFiles, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test completing the first case of a dataset with the monitor on."""
        out = tmp_path / "record.json"
        code = main(
            ["complete", "--config", str(run_files.config_toml), "--case", str(run_files.dataset), "--out", str(out)]
        )
        assert code == EXIT_OK
        assert capsys.readouterr().out == "withIp(ip);\n    }\n"
        record = json.loads(out.read_text(encoding="utf-8"))
        assert record["stop_reason"] == "method_close"
        assert record["monitor_enabled"] is True

    def test_from_workspace_without_monitor(self, run_files: RunFiles, capsys: pytest.CaptureFixture[str]) -> None:
        """Test cutting a case at an offset and decoding unconstrained."""
        code = main(
            [
                "complete",
                "--config",
                str(run_files.config_toml),
                "--workspace",
                str(run_files.workspace),
                "--file",
                CLUSTER_FILE,
                "--offset",
                str(dot_offsets()[0]),
                "--monitor",
                "off",
            ]
        )
        assert code == EXIT_OK
        assert capsys.readouterr().out.startswith("host(")

    def test_case_id_selection(self, run_files: RunFiles, capsys: pytest.CaptureFixture[str]) -> None:
        """Test picking a case by id."""
        second = run_files.cases[1].case_id
        args = ["complete", "--config", str(run_files.config_toml), "--case", str(run_files.dataset)]
        assert main([*args, "--case-id", second]) == EXIT_OK
        assert capsys.readouterr().out.startswith("with")
        assert main([*args, "--case-id", "nope"]) == EXIT_USAGE
        assert "no case 'nope'" in capsys.readouterr().err

    def test_usage_errors(self, run_files: RunFiles, capsys: pytest.CaptureFixture[str]) -> None:
        """Test missing and conflicting case selectors."""
        assert main(["complete", "--config", str(run_files.config_toml)]) == EXIT_USAGE
        assert "complete needs --case" in capsys.readouterr().err
        conflicting = [
            "complete",
            "--config",
            str(run_files.config_toml),
            "--case",
            str(run_files.dataset),
            "--workspace",
            str(run_files.workspace),
        ]
        assert main(conflicting) == EXIT_USAGE
        assert "use either --case" in capsys.readouterr().err

    def test_bad_config(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test that configuration errors are usage errors."""
        config = tmp_path / "run.toml"
        config.write_text("[backend]\nkind = 'mock'\n", encoding="utf-8")
        assert main(["complete", "--config", str(config), "--case", "x.jsonl"]) == EXIT_USAGE
        assert "needs a [provider] section" in capsys.readouterr().err

    def test_missing_dataset(self, run_files: RunFiles, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test that an unreadable dataset is an operational failure."""
        args = ["complete", "--config", str(run_files.config_toml), "--case", str(tmp_path / "none.jsonl")]
        assert main(args) == EXIT_FAILURE
        assert "cannot read file" in capsys.readouterr().err


class TestEvalAndScore:
    """Test dataset runs and re-scoring."""

    def test_eval_then_score(self, run_files: RunFiles, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test that score reproduces the table eval printed."""
        out_dir = tmp_path / "out"
        args = ["--dataset", str(run_files.dataset), "--config", str(run_files.config_toml), "--out-dir", str(out_dir)]
        code = main(["eval", *args])
        assert code == EXIT_OK
        printed = capsys.readouterr().out
        assert "mgd (2 cases, n=6)" in printed
        assert (out_dir / "records.jsonl").exists()
        assert (out_dir / "report.csv").exists()

        assert main(["score", "--records", str(out_dir / "records.jsonl")]) == EXIT_OK
        table = capsys.readouterr().out
        assert table == printed[: len(table)]

    def test_eval_overrides(self, run_files: RunFiles, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test label, seed and baseline flags."""
        out_dir = tmp_path / "out"
        code = main(
            [
                "eval",
                "--dataset",
                str(run_files.dataset),
                "--config",
                str(run_files.config_toml),
                "--out-dir",
                str(out_dir),
                "--compare-baseline",
                "--seed",
                "11",
                "--workers",
                "2",
            ]
        )
        assert code == EXIT_OK
        printed = capsys.readouterr().out
        assert "baseline (2 cases, n=6)" in printed

    def test_score_json(self, run_files: RunFiles, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test JSON output and explicit k values."""
        out_dir = tmp_path / "out"
        args = ["--dataset", str(run_files.dataset), "--config", str(run_files.config_toml), "--out-dir", str(out_dir)]
        main(["eval", *args])
        capsys.readouterr()

        assert main(["score", "--records", str(out_dir / "records.jsonl"), "--k", "1,6", "--json"]) == EXIT_OK
        reports = json.loads(capsys.readouterr().out)
        assert reports["mgd"]["aggregates"]["nim"]["1"] == 0.5
        assert set(reports["mgd"]["aggregates"]["nim"]) == {"1", "6"}

        assert main(["score", "--records", str(out_dir / "records.jsonl"), "--k", "9"]) == EXIT_USAGE
        assert "outside 1..6" in capsys.readouterr().err

    def test_score_errors(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test empty and missing records files."""
        empty = tmp_path / "records.jsonl"
        empty.write_text("", encoding="utf-8")
        assert main(["score", "--records", str(empty)]) == EXIT_FAILURE
        assert "no records in" in capsys.readouterr().err
        assert main(["score", "--records", str(tmp_path / "missing.jsonl")]) == EXIT_FAILURE
        with pytest.raises(SystemExit) as excinfo:
            main(["score", "--records", str(empty), "--k", "0"])
        assert excinfo.value.code == 2


class TestDerive:
    """Test dataset derivation from source files."""

    def test_derive(self, workspace: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test writing every dereference of the builder file."""
        out = tmp_path / "derived.jsonl"
        assert main(["derive", "--workspace", str(workspace), "--file", CLUSTER_FILE, "--out", str(out)]) == EXIT_OK
        assert capsys.readouterr().out == f"4 cases written to {out}\n"
        assert len(load_dataset(out)) == 4

    def test_invalid_max_dots(self, workspace: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test the per-method cap check."""
        args = ["derive", "--workspace", str(workspace), "--file", CLUSTER_FILE, "--out", str(tmp_path / "d.jsonl")]
        assert main([*args, "--max-dots", "0"]) == EXIT_USAGE
        assert "--max-dots must be >= 1" in capsys.readouterr().err


class TestMaskDebug:
    """Test the mask listing."""

    def test_listing(self, run_files: RunFiles, capsys: pytest.CaptureFixture[str]) -> None:
        """Test residuals and admitted tokens after a consumed prefix."""
        code = main(
            ["mask-debug", "--vocab", str(run_files.vocab), "--suggestions", "withIp, withPort", "--consumed", "with"]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith("residuals (2): Ip, Port\n")
        assert "'Ip'" in out
        assert "'Port'" in out
        assert "'host'" not in out

    def test_failures(self, run_files: RunFiles, capsys: pytest.CaptureFixture[str]) -> None:
        """Test empty suggestions, delimiters and mask violations."""
        vocab = ["mask-debug", "--vocab", str(run_files.vocab)]
        assert main([*vocab, "--suggestions", " , "]) == EXIT_FAILURE
        assert "no suggestions given" in capsys.readouterr().err
        assert main([*vocab, "--suggestions", "withIp", "--consumed", "withIp("]) == EXIT_FAILURE
        assert "ends the identifier" in capsys.readouterr().err
        assert main([*vocab, "--suggestions", "withIp", "--consumed", "host"]) == EXIT_FAILURE


class TestServe:
    """Test the logit server command."""

    def test_serve_runs_uvicorn(self, run_files: RunFiles) -> None:
        """Test that the configured backend is handed to uvicorn."""
        with patch("uvicorn.run") as run:
            code = main(["serve", "--config", str(run_files.config_toml), "--port", "9001"])
        assert code == EXIT_OK
        run.assert_called_once()
        assert run.call_args.kwargs == {"host": "127.0.0.1", "port": 9001}


class TestParser:
    """Test parser-level behavior."""

    def test_help_and_version(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Test that --help and --version exit cleanly."""
        with pytest.raises(SystemExit) as excinfo:
            main(["--help"])
        assert excinfo.value.code == 0
        assert "mask-debug" in capsys.readouterr().out
        with pytest.raises(SystemExit):
            main(["--version"])
        assert __version__ in capsys.readouterr().out

    def test_unknown_command(self) -> None:
        """Test that argparse rejects unknown commands with exit code 2."""
        with pytest.raises(SystemExit) as excinfo:
            main(["decode"])
        assert excinfo.value.code == 2

    def test_bad_monitor_flag(self, run_files: RunFiles) -> None:
        """Test the on/off flag type."""
        with pytest.raises(SystemExit):
            main(["complete", "--config", str(run_files.config_toml), "--monitor", "yes"])


class TestConfigureLogging:
    """Test log level selection."""

    @pytest.mark.parametrize(
        "value,level",
        [("debug", logging.DEBUG), ("INFO", logging.INFO), ("10", 10), ("chatty", logging.WARNING)],
    )
    def test_level(self, value: str, level: int) -> None:
        """Test names, numbers and unknown values."""
        with patch("logging.basicConfig") as basic_config:
            configure_logging({"MGD_LOG": value})
        assert basic_config.call_args.kwargs["level"] == level

    def test_default(self) -> None:
        """Test the default level."""
        with patch("logging.basicConfig") as basic_config:
            configure_logging({})
        assert basic_config.call_args.kwargs["level"] == logging.WARNING
