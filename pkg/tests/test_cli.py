"""Command-line surface: outputs, flags, exit codes."""

import json
from pathlib import Path

import pytest

from safefleet.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestPower:
    def test_hover_at_zero_speed(self, capsys):
        code, out, _ = run_cli(capsys, "power", "--speed", "0")
        assert code == 0
        assert "636900" in out or "6.369e+05" in out

    def test_propulsion_breakdown_at_cruise(self, capsys):
        code, out, _ = run_cli(capsys, "power", "--speed", "73.762")
        assert code == 0
        assert "261635" in out
        assert "parasite" in out


class TestSimulate:
    def test_runs_and_writes(self, capsys, tmp_path):
        out_dir = tmp_path / "sim"
        code, out, _ = run_cli(
            capsys,
            "simulate", "--seed", "3", "--episodes", "2",
            "--mode", "safeguarded", "--out", str(out_dir),
        )
        assert code == 0
        assert (out_dir / "summary.json").exists()
        assert "success_rate" in out

    def test_missing_config_file_fails_with_diagnostic(self, capsys, tmp_path):
        code, _, err = run_cli(
            capsys, "simulate", "--config", str(tmp_path / "missing.json")
        )
        assert code == 1
        assert "missing.json" in err

    def test_invalid_config_fails_with_diagnostic(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"schema_version": 1, "nonsense": True}))
        code, _, err = run_cli(capsys, "simulate", "--config", str(bad))
        assert code == 1
        assert "nonsense" in err


class TestCompare:
    def test_writes_both_modes(self, capsys, tmp_path):
        out_dir = tmp_path / "cmp"
        code, out, _ = run_cli(
            capsys, "compare", "--seed", "7", "--episodes", "3", "--out", str(out_dir)
        )
        assert code == 0
        summary = json.loads((out_dir / "summary.json").read_text())
        assert "planner_only" in summary["results"]
        assert "safeguarded" in summary["results"]
        assert "planner_only" in out and "safeguarded" in out


class TestAudit:
    def test_prints_class_table(self, capsys, tmp_path):
        code, out, _ = run_cli(
            capsys, "audit", "--seed", "5", "--episodes", "3", "--out", str(tmp_path)
        )
        assert code == 0
        for name in ("battery", "duplicate", "route", "sector"):
            assert name in out
        assert (tmp_path / "audit.json").exists()


class TestTrain:
    def test_writes_log_and_checkpoint(self, capsys, tmp_path):
        out_dir = tmp_path / "train"
        code, out, _ = run_cli(
            capsys, "train", "--seed", "1", "--episodes", "2", "--out", str(out_dir)
        )
        assert code == 0
        log = (out_dir / "training_log.csv").read_text().splitlines()
        assert log[0].startswith("episode,")
        assert len(log) == 3
        assert (out_dir / "checkpoint.npz").exists()


def test_unknown_subcommand_exits_nonzero(capsys):
    with pytest.raises(SystemExit):
        main(["unknown-subcommand"])
