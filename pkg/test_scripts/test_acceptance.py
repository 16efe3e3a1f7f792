#!/usr/bin/env python3
"""
Desk-scale acceptance checks. They need the real MNIST files ($LGN_DATA_DIR) and
minutes of CPU time, so they only run with LGN_RUN_SLOW=1:

    LGN_RUN_SLOW=1 LGN_DATA_DIR=~/data/mnist pytest -m slow
"""

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'lgn-scripts'))

import numpy as np
import pytest

from data_loader import DATA_DIR_ENV, DatasetSpec, load_dataset, load_mnist
from data_transformer import binarize_threshold, pixel_distribution_report
from experiment_flow import RUN_FILES, config_from_dict
from report_builder import build_tables, render_text
from selection import sample_gumbel, softmax_temp
from sweep_runner import MANIFEST_NAME, load_manifest, run_sweep
from training import CageSettings, MetricsLog, create_cage_state

RUN_SLOW = os.environ.get("LGN_RUN_SLOW") == "1"
DATA_DIR = os.environ.get(DATA_DIR_ENV)

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(not RUN_SLOW, reason="set LGN_RUN_SLOW=1 to run desk-scale checks"),
]
needs_mnist = pytest.mark.skipif(not DATA_DIR, reason=f"set {DATA_DIR_ENV} to the MNIST directory")


@needs_mnist
def test_mnist_files_parse():
    train = load_mnist(DATA_DIR, "train")
    test = load_mnist(DATA_DIR, "test")
    assert train.features.shape == (60000, 784)
    assert test.features.shape == (10000, 784)
    assert set(np.unique(train.labels)) == set(range(10))


@needs_mnist
def test_mnist_pixel_distribution():
    train = load_mnist(DATA_DIR, "train")
    report = pixel_distribution_report(train.features)
    print(report.render())
    assert 100 * report.exactly_zero == pytest.approx(80.9, abs=0.5)
    assert 100 * report.binary_like == pytest.approx(91.3, abs=0.5)
    zero_bits = 1.0 - binarize_threshold(train.features).mean()
    assert 100 * zero_bits == pytest.approx(86.7, abs=0.5)


def test_gumbel_max_law_at_full_sample_size():
    rng = np.random.default_rng(2024)
    draws = 10 ** 6
    for _ in range(20):
        z = rng.standard_normal(16)
        winners = np.argmax(z + sample_gumbel(16, rng, (draws,)), axis=-1)
        empirical = np.bincount(winners, minlength=16) / draws
        assert 0.5 * np.abs(empirical - softmax_temp(z, 1.0)).sum() < 0.01


DESK_TAU_GRID = [0.05, 0.1, 0.5, 1.0, 2.0]
DESK_METHODS = ["hard-st", "gumbel-st", "gumbel-st+cage"]


@pytest.fixture(scope="module")
def desk_sweep(tmp_path_factory):
    """One seed of each hard method over the full tau grid, at desk scale."""
    if not DATA_DIR:
        pytest.skip(f"set {DATA_DIR_ENV} to the MNIST directory")
    out_dir = tmp_path_factory.mktemp("desk_sweep")
    config = config_from_dict({
        "dataset": "mnist-binary", "data_dir": DATA_DIR, "subset": 10000,
        "layers": 3, "width": 8000, "methods": DESK_METHODS, "tau_grid": DESK_TAU_GRID,
        "seeds": [0], "iters": 10000, "eval_every": 500, "out": str(out_dir),
    })
    workers = int(os.environ.get("LGN_SLOW_WORKERS", "1"))
    result = run_sweep(config, out_dir, workers=workers)
    assert result["success"], result["report"]
    manifest = load_manifest(out_dir / MANIFEST_NAME)
    tables = build_tables(manifest)
    print(render_text(tables))
    return {
        "manifest": manifest,
        "cells": {(row.method, row.tau): row for row in tables["cells"]},
        "methods": {row.method: row for row in tables["methods"]},
    }


def _metrics_for(desk_sweep, method, tau):
    entry = desk_sweep["manifest"]["cells"][f"{method}|tau={tau:g}|seed=0"]
    return MetricsLog.from_jsonl(os.path.join(entry["run_dir"], RUN_FILES["metrics"]))


@needs_mnist
@pytest.mark.parametrize("tau", DESK_TAU_GRID)
def test_hard_st_selection_gap_is_zero_at_every_tau(desk_sweep, tau):
    row = desk_sweep["cells"][("hard-st", tau)]
    assert row.final_gap == 0.0
    assert row.peak_gap == 0.0
    assert not row.training_failure
    assert np.all(_metrics_for(desk_sweep, "hard-st", tau).column("selection_gap") == 0.0)


@needs_mnist
def test_hard_st_is_flat_across_tau(desk_sweep):
    assert desk_sweep["cells"][("hard-st", 1.0)].final_accuracy >= 0.90
    assert desk_sweep["methods"]["hard-st"].accuracy_range < 0.05


@needs_mnist
def test_gumbel_st_collapses_at_low_tau(desk_sweep):
    cells = desk_sweep["cells"]
    low, reference = cells[("gumbel-st", 0.05)], cells[("gumbel-st", 1.0)]
    assert reference.final_accuracy - low.final_accuracy >= 0.20
    assert desk_sweep["methods"]["gumbel-st"].accuracy_range > 0.20


@needs_mnist
def test_cage_keeps_gumbel_st_flat_across_tau(desk_sweep):
    methods = desk_sweep["methods"]
    assert methods["gumbel-st"].accuracy_range > 0.20
    assert methods["gumbel-st+cage"].accuracy_range < 0.05


@needs_mnist
@pytest.mark.parametrize("tau", DESK_TAU_GRID)
def test_cage_backward_temperature_stays_bounded_and_falls(desk_sweep, tau):
    start = create_cage_state(CageSettings()).tau_b
    assert start == 3.0
    tau_b = _metrics_for(desk_sweep, "gumbel-st+cage", tau).column("tau_b")
    assert np.all((tau_b >= 0.5) & (tau_b <= 3.0))
    assert tau_b[-1] < start


@needs_mnist
def test_mnist_binary_dataset_is_bits():
    train, test = load_dataset(DatasetSpec(name="mnist-binary", data_dir=DATA_DIR, subset=1000, test_subset=500))
    assert set(np.unique(train.features)) <= {0, 1}
    assert test.features.shape == (500, 784)


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-m", "slow"])
