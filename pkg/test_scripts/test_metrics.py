#!/usr/bin/env python3
"""
Tests for the gap decomposition, commitment, gate usage, the loss-gap diagnostic
and peak-gap summaries.
"""

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'lgn-scripts'))

import numpy as np
import pytest

from gate_algebra import GateId, NUM_GATES
from metrics import (
    GapReport, accuracy, commitment_by_layer, computation_gap_by_gate, evaluate_three_ways, final_gap, gate_usage,
    loss_gap_bound, loss_gap_bound_value, peak_gap, signed_peak,
)
from network import Architecture, build_network, network_from_arrays
from selection import HARD_ST, SOFT_MIX
from training import MetricsLog, MetricsRow

CHI_SQUARE_15_DF_1_PERCENT = 30.578


def _log(values, column="selection_gap"):
    log = MetricsLog()
    for index, value in enumerate(values):
        fields = dict(loss=0.0, train_accuracy=0.0, a_method=0.0, a_soft=0.0, a_hard=0.0, selection_gap=0.0,
                      computation_gap=0.0, total_gap=0.0, confidence=0.0, tau_b=1.0)
        fields[column] = value
        log.append(MetricsRow(iteration=(index + 1) * 10, **fields))
    return log


def _forced(gates_per_layer, input_width, classes):
    wirings, logits = [], []
    prev = input_width
    for gates in gates_per_layer:
        width = len(gates)
        src_a = np.arange(width) % prev
        src_b = (src_a + 1) % prev
        z = np.full((width, NUM_GATES), -50.0)
        z[np.arange(width), [int(g) for g in gates]] = 50.0
        wirings.append((src_a, src_b))
        logits.append(z)
        prev = width
    return network_from_arrays(input_width, wirings, logits, classes)


def test_gap_report_telescopes():
    rng = np.random.default_rng(0)
    for a_method, a_soft, a_hard in rng.uniform(size=(100, 3)):
        report = GapReport(a_method, a_soft, a_hard)
        assert report.total_gap == report.selection_gap + report.computation_gap
        assert report.total_gap == pytest.approx(a_method - a_hard, abs=1e-15)
    assert GapReport(0.9, 0.8, 0.75).as_percent()["selection_gap"] == pytest.approx(10.0)


def test_accuracy_rejects_empty_sets():
    assert accuracy(np.array([[0.0, 1.0], [2.0, 1.0]]), np.array([1, 1])) == 0.5
    with pytest.raises(ValueError):
        accuracy(np.zeros((0, 2)), np.zeros(0))


def test_mixture_network_has_selection_gap():
    # node 0 mixes A and NOT_A, node 1 is committed to B
    z0 = np.full(NUM_GATES, -50.0)
    z0[GateId.A], z0[GateId.NOT_A] = 1.0, 0.9
    z1 = np.full(NUM_GATES, -50.0)
    z1[GateId.B] = 1.0
    network = network_from_arrays(2, [([0, 0], [1, 1])], [np.stack([z0, z1])], classes=2)
    features = np.array([[1.0, 1.0], [0.0, 0.0]])
    labels = np.array([0, 0])
    report = evaluate_three_ways(network, features, labels, SOFT_MIX, 1.0)
    assert report.a_method == 0.5
    assert report.a_soft == 1.0
    assert report.a_hard == 1.0
    assert report.selection_gap == -0.5
    assert report.computation_gap == 0.0


def test_hard_st_and_binary_inputs_have_no_gap():
    network = build_network(Architecture(10, 2, 20, 2), seed=1)
    rng = np.random.default_rng(1)
    bits = rng.integers(0, 2, (300, 10)).astype(np.float64)
    labels = rng.integers(0, 2, 300)
    report = evaluate_three_ways(network, bits, labels, HARD_ST, 0.3)
    assert report.selection_gap == 0.0
    assert report.computation_gap == 0.0


def test_commitment_levels():
    uniform = network_from_arrays(2, [([0, 1], [1, 0])], [np.zeros((2, NUM_GATES))], classes=2)
    assert commitment_by_layer(uniform).network_mean == pytest.approx(1 / 16)
    forced = _forced([[GateId.AND] * 4], 3, classes=2)
    assert commitment_by_layer(forced).network_mean == pytest.approx(1.0)

    fresh = build_network(Architecture(50, 3, 2000, 10), seed=0)
    report = commitment_by_layer(fresh)
    assert 1 / 16 < report.network_mean < 0.5
    assert max(report.per_layer) - min(report.per_layer) < 0.03


def test_gate_usage_counts():
    forced = _forced([[GateId.AND] * 4, [GateId.XOR, GateId.AND, GateId.OR, GateId.OR]], 3, classes=2)
    usage = gate_usage(forced)
    assert usage.node_count == 8
    assert usage.total[GateId.AND] == 5
    assert usage.total[GateId.OR] == 2
    assert usage.per_layer[0, GateId.AND] == 4
    assert usage.as_dict()["XOR"] == 1
    assert usage.fractions().sum() == pytest.approx(1.0)


def test_fresh_init_gate_usage_is_uniform():
    network = build_network(Architecture(100, 1, 10000, 10), seed=0)
    usage = gate_usage(network)
    assert usage.node_count == 10000
    assert usage.chi_square_uniform() < CHI_SQUARE_15_DF_1_PERCENT


def test_loss_gap_bound_hand_case():
    assert loss_gap_bound_value(0.6, [[0.75, 0.75], [0.75, 0.75]]) == pytest.approx(0.4)


def test_loss_gap_bound_on_networks():
    committed = _forced([[GateId.AND, GateId.OR, GateId.XOR, GateId.A]], 3, classes=2)
    bits = np.random.default_rng(2).integers(0, 2, (20, 3)).astype(np.float64)
    labels = np.zeros(20, dtype=np.int64)
    np.testing.assert_allclose(loss_gap_bound(committed, bits, labels), 0.0, atol=1e-12)

    fresh = build_network(Architecture(3, 1, 4, 2), seed=3)
    bound = loss_gap_bound(fresh, bits, labels)
    assert bound.shape == (20,)
    assert np.all(bound >= 0.0)


def test_peak_gap():
    assert peak_gap(_log([0.0, 0.17, 0.02])) == pytest.approx(0.17)
    assert peak_gap(_log([0.01, -0.3, 0.1])) == pytest.approx(-0.3)
    assert peak_gap(_log([0.5, 0.0, 0.0, 0.0, 0.01]), window="last80") == pytest.approx(0.01)
    assert final_gap(_log([0.0, 0.17, 0.02])) == pytest.approx(0.02)
    assert peak_gap(_log([0.0, 0.05], column="total_gap"), column="total_gap") == pytest.approx(0.05)
    with pytest.raises(ValueError):
        peak_gap(MetricsLog())
    with pytest.raises(ValueError):
        peak_gap(_log([0.1]), window="middle")


def test_signed_peak():
    assert signed_peak([0.02, -0.08, 0.05]) == pytest.approx(-0.08)
    assert signed_peak([-0.1, 0.1]) == pytest.approx(-0.1)
    assert signed_peak(np.array([0.0, 0.0])) == 0.0
    with pytest.raises(ValueError):
        signed_peak([])


def test_computation_gap_by_gate():
    gaps = computation_gap_by_gate(np.array([[0.0, 1.0], [1.0, 0.0]]), n=1000)
    assert set(gaps) == {"FALSE", "AND", "A_AND_NOT_B", "A", "NOT_A_AND_B", "B", "XOR", "OR", "NOR", "XNOR",
                         "NOT_B", "A_OR_NOT_B", "NOT_A", "NOT_A_OR_B", "NAND", "TRUE"}
    assert all(value == 0.0 for value in gaps.values())


if __name__ == "__main__":
    print("📏 Testing metrics...")
    pytest.main([__file__, "-v"])
