#!/usr/bin/env python3
"""
End-to-end tests of the command-line entry point and its exit codes.
"""

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'lgn-scripts'))

import pytest

from cli import build_parser, main
from data_loader import DATA_DIR_ENV
from error_handler import EXIT_CONFIG, EXIT_DATA, EXIT_OK

TINY_FLAGS = ["--dataset", "teacher-circuit", "--dims", "8", "--samples", "256", "--layers", "2", "--width", "16",
              "--iters", "20", "--batch", "16", "--eval-every", "10", "--lr", "0.05"]


def test_parser_lists():
    args = build_parser().parse_args(["sweep", "--tau-grid", "0.1,1", "--seeds", "0,1", "--methods", "hard-st, soft-mix"])
    assert args.tau_grid == [0.1, 1.0]
    assert args.seeds == [0, 1]
    assert args.methods == ["hard-st", "soft-mix"]


def test_usage_errors_exit_with_config_code():
    with pytest.raises(SystemExit) as excinfo:
        main(["run", "--iters", "many"])
    assert excinfo.value.code == EXIT_CONFIG


def test_invalid_method(tmp_path):
    assert main(["run", "--method", "bogus", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_missing_data_directory(tmp_path, monkeypatch):
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)
    assert main(["run", "--dataset", "mnist", "--width", "20", "--layers", "1", "--out", str(tmp_path)]) == EXIT_DATA


def test_run_export_and_verify(tmp_path, capsys):
    assert main(["run", *TINY_FLAGS, "--out", str(tmp_path), "--export-circuit"]) == EXIT_OK
    run_dir = tmp_path / "hard-st_tau1_seed0"
    checkpoint = run_dir / "checkpoint.npz"
    assert checkpoint.exists()
    assert '"success": true' in capsys.readouterr().out

    out = tmp_path / "exported.txt"
    assert main(["export-circuit", str(checkpoint), "--out", str(out), "--verify-samples", "500"]) == EXIT_OK
    assert out.exists()
    assert main(["verify-circuit", str(out), str(checkpoint)]) == EXIT_OK
    assert main(["verify-circuit", str(tmp_path / "nope.txt"), str(checkpoint)]) == EXIT_CONFIG


def test_sweep_then_report(tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", *TINY_FLAGS, "--methods", "hard-st,gumbel-st", "--tau-grid", "1.0", "--seeds", "0",
                 "--out", str(out)]) == EXIT_OK
    assert (out / "manifest.json").exists()
    assert main(["report", str(out / "manifest.json")]) == EXIT_OK
    assert (out / "report.txt").exists()


def test_pixel_report_on_synthetic_bits(capsys):
    assert main(["pixel-report", "--dataset", "parity", "--gates", "--gap-samples", "1000"]) == EXIT_OK
    assert "binary_like" in capsys.readouterr().out


if __name__ == "__main__":
    print("💻 Testing the command line...")
    pytest.main([__file__, "-v"])
