#!/usr/bin/env python3
"""
Tests for the two-input gate family: soft/hard agreement, thresholding and the
computation gap of every gate.
"""

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'lgn-scripts'))

import numpy as np
import pytest

from gate_algebra import (
    GATES, GATE_COEFFS, GateId, TRUTH_TABLES, computation_gap_empirical, computation_gap_samples,
    computation_gap_table, computation_gap_uniform, get_gate, hard_gate_eval, negation_of, soft_gate_eval,
    soft_gate_partials, threshold,
)

CORNERS = [(0, 0), (0, 1), (1, 0), (1, 1)]


@pytest.mark.parametrize("gate", list(GateId))
def test_soft_gate_matches_truth_table_on_corners(gate):
    for a, b in CORNERS:
        assert soft_gate_eval(gate, a, b) == hard_gate_eval(gate, a, b)


def test_named_gates_follow_their_formulas():
    assert TRUTH_TABLES[GateId.AND].tolist() == [0, 0, 0, 1]
    assert TRUTH_TABLES[GateId.XOR].tolist() == [0, 1, 1, 0]
    assert TRUTH_TABLES[GateId.A_AND_NOT_B].tolist() == [0, 0, 1, 0]
    assert TRUTH_TABLES[GateId.NOT_A_OR_B].tolist() == [1, 1, 0, 1]
    assert soft_gate_eval("XOR", 0.5, 0.5) == pytest.approx(0.5)
    assert soft_gate_eval("OR", 0.3, 0.4) == pytest.approx(0.3 + 0.4 - 0.12)


def test_gate_tables_are_read_only_and_complete():
    assert GATE_COEFFS.shape == (16, 4)
    assert len({g.truth_table for g in GATES}) == 16
    with pytest.raises(ValueError):
        GATE_COEFFS[0, 0] = 1.0


def test_get_gate_accepts_index_enum_and_name():
    assert get_gate(6) is get_gate(GateId.XOR) is get_gate("xor")
    with pytest.raises(ValueError):
        get_gate(16)
    with pytest.raises(ValueError):
        get_gate("MAYBE")


def test_negation_pairs():
    assert negation_of("AND").id == GateId.NAND
    assert negation_of("XOR").id == GateId.XNOR
    assert negation_of("FALSE").id == GateId.TRUE
    for spec in GATES:
        assert negation_of(negation_of(spec)) is spec


def test_threshold_is_strict():
    assert threshold(0.5) == 0
    assert threshold(0.5000001) == 1
    assert threshold(np.array([0.0, 0.49, 0.5, 0.51, 1.0])).tolist() == [0, 0, 0, 1, 1]


def test_input_validation():
    with pytest.raises(ValueError):
        soft_gate_eval("AND", 1.2, 0.5)
    with pytest.raises(ValueError):
        soft_gate_eval("AND", np.nan, 0.5)
    with pytest.raises(ValueError):
        hard_gate_eval("AND", 0.5, 1)
    # a few ulps outside [0, 1] from rounding are tolerated
    assert soft_gate_eval("A", 1.0 + 1e-15, 0.0) == pytest.approx(1.0)


def test_soft_gate_partials_match_finite_differences():
    rng = np.random.default_rng(3)
    a = rng.uniform(0.1, 0.9, 50)
    b = rng.uniform(0.1, 0.9, 50)
    h = 1e-6
    for spec in GATES:
        da, db = soft_gate_partials(spec, a, b)
        num_da = (soft_gate_eval(spec, a + h, b) - soft_gate_eval(spec, a - h, b)) / (2 * h)
        num_db = (soft_gate_eval(spec, a, b + h) - soft_gate_eval(spec, a, b - h)) / (2 * h)
        np.testing.assert_allclose(da, num_da, atol=1e-8)
        np.testing.assert_allclose(db, num_db, atol=1e-8)


@pytest.mark.parametrize("gate, expected", [
    ("A", 0.25), ("NOT_B", 0.25),
    ("AND", 0.21875), ("OR", 0.21875), ("NAND", 0.21875), ("A_AND_NOT_B", 0.21875),
    ("XOR", 0.375), ("XNOR", 0.375),
    ("FALSE", 0.0), ("TRUE", 0.0),
])
def test_uniform_computation_gap_exact(gate, expected):
    assert computation_gap_uniform(gate) == expected


def test_computation_gap_table_groups():
    table = computation_gap_table()
    assert sorted(table) == [0.0, 0.21875, 0.25, 0.375]
    assert sorted(table[0.0]) == ["FALSE", "TRUE"]
    assert sorted(table[0.375]) == ["XNOR", "XOR"]
    assert sorted(table[0.25]) == ["A", "B", "NOT_A", "NOT_B"]
    assert len(table[0.21875]) == 8


def test_monte_carlo_agrees_with_analytic_xor_gap():
    samples = computation_gap_samples("XOR", "uniform", 10 ** 6, seed=0)
    stderr = samples.std(ddof=1) / np.sqrt(samples.size)
    assert abs(samples.mean() - 0.375) < 3 * stderr


def test_monte_carlo_agrees_for_every_gate():
    for spec in GATES:
        samples = computation_gap_samples(spec, "uniform", 200000, seed=spec.id)
        expected = computation_gap_uniform(spec)
        if expected == 0.0:
            assert samples.max() == 0.0
            continue
        stderr = samples.std(ddof=1) / np.sqrt(samples.size)
        assert abs(samples.mean() - expected) < 4 * stderr, spec.name


def test_binary_inputs_have_no_computation_gap():
    for spec in GATES:
        assert computation_gap_empirical(spec, "binary", 1000, seed=1) == 0.0


def test_boundary_sampler_and_empirical_values():
    # a pinned at 0.5 thresholds to 0, so AND's soft output 0.5 b is all error
    assert computation_gap_empirical("AND", "boundary", 200000, seed=2) == pytest.approx(0.25, abs=0.005)
    values = np.array([0.0, 1.0])
    assert computation_gap_empirical("XOR", values, 1000) == 0.0
    with pytest.raises(ValueError):
        computation_gap_samples("AND", "gaussian", 10)


if __name__ == "__main__":
    print("🔌 Testing gate algebra...")
    pytest.main([__file__, "-v"])
