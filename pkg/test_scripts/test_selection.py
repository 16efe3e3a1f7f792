#!/usr/bin/env python3
"""
Tests for per-node selection: the four forward modes, Gumbel sampling, the shared
straight-through gradient and the selection gap bound.
"""

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'lgn-scripts'))

import numpy as np
import pytest

from selection import (
    ALL_METHODS, GUMBEL_ST, HARD_ST, SOFT_GUMBEL, SOFT_MIX, MethodConfig, argmax_select, backward_node,
    forward_node, node_selection_gap, sample_gumbel, selection_gap_bound, softmax_temp, surrogate_weights,
)

K = 16


def _node(seed, n=None):
    rng = np.random.default_rng(seed)
    shape = (K,) if n is None else (n, K)
    return rng.standard_normal(shape), rng.uniform(0.0, 1.0, shape), rng


def test_method_names_round_trip():
    for method in ALL_METHODS:
        assert MethodConfig.from_name(method.name) == method
    assert HARD_ST.temperature_role == "backward-only"
    assert SOFT_MIX.temperature_role == "shared"
    with pytest.raises(ValueError, match="Unknown method"):
        MethodConfig.from_name("straight-through")


def test_softmax_temp_rejects_bad_inputs():
    with pytest.raises(ValueError):
        softmax_temp(np.zeros(4), 0.0)
    with pytest.raises(ValueError):
        softmax_temp(np.zeros(4), float("inf"))
    with pytest.raises(ValueError):
        softmax_temp(np.array([0.0, np.nan]), 1.0)
    np.testing.assert_allclose(softmax_temp(np.zeros(4), 1.0), 0.25)


def test_argmax_ties_go_to_lowest_index():
    assert argmax_select(np.array([1.0, 3.0, 3.0])) == 1
    assert argmax_select(np.array([[2.0, 2.0], [0.0, 1.0]])).tolist() == [0, 1]


def test_soft_mix_forward_is_weighted_sum():
    z, g, _ = _node(0)
    record = forward_node(z, SOFT_MIX, 0.7, None, g)
    assert record.h == pytest.approx(np.sum(softmax_temp(z, 0.7) * g))
    assert record.winner is None


def test_hard_st_forward_ignores_temperature():
    z, g, _ = _node(1)
    cold = forward_node(z, HARD_ST, 0.1, None, g)
    hot = forward_node(z, HARD_ST, 5.0, None, g)
    assert cold.h == hot.h == g[np.argmax(z)]
    assert not np.allclose(cold.weights, hot.weights)


def test_gumbel_st_uses_perturbed_argmax():
    z, g, rng = _node(2)
    noise = sample_gumbel(K, rng)
    record = forward_node(z, GUMBEL_ST, 1.0, noise, g)
    assert record.h == g[np.argmax(z + noise)]
    soft = forward_node(z, SOFT_GUMBEL, 1.0, noise, g)
    assert soft.h == pytest.approx(np.sum(softmax_temp(z + noise, 1.0) * g))


def test_noise_must_match_method():
    z, g, rng = _node(3)
    with pytest.raises(ValueError):
        forward_node(z, GUMBEL_ST, 1.0, None, g)
    with pytest.raises(ValueError):
        forward_node(z, HARD_ST, 1.0, sample_gumbel(K, rng), g)


def test_gumbel_max_matches_softmax_law():
    rng = np.random.default_rng(4)
    draws = 200000
    for _ in range(5):
        z = rng.standard_normal(K)
        winners = np.argmax(z + sample_gumbel(K, rng, (draws,)), axis=-1)
        empirical = np.bincount(winners, minlength=K) / draws
        total_variation = 0.5 * np.abs(empirical - softmax_temp(z, 1.0)).sum()
        assert total_variation < 0.01


def test_perturbed_argmax_does_not_depend_on_temperature():
    z, _, rng = _node(5, n=1000)
    scores = z + sample_gumbel(K, rng, (1000,))
    for tau in (0.1, 1.0, 10.0):
        np.testing.assert_array_equal(argmax_select(scores / tau), argmax_select(scores))


@pytest.mark.parametrize("method", ALL_METHODS, ids=lambda m: m.name)
def test_logit_gradient_sums_to_zero(method):
    z, g, rng = _node(6, n=1000)
    noise = sample_gumbel(K, rng, (1000,)) if method.uses_noise else None
    tau = 0.5
    record = forward_node(z, method, tau, noise, g)
    delta = rng.standard_normal(1000)
    dz, _, _ = backward_node(record, delta, tau, np.zeros_like(g), np.zeros_like(g))
    assert np.max(np.abs(dz.sum(axis=-1))) < 1e-12


def test_soft_mix_gradient_matches_finite_differences():
    z, g, _ = _node(7)
    tau = 0.8
    record = forward_node(z, SOFT_MIX, tau, None, g)
    dz, _, _ = backward_node(record, 1.0, tau, np.zeros_like(g), np.zeros_like(g))
    eps = 1e-6
    numeric = np.zeros(K)
    for j in range(K):
        step = np.zeros(K)
        step[j] = eps
        numeric[j] = (forward_node(z + step, SOFT_MIX, tau, None, g).h
                      - forward_node(z - step, SOFT_MIX, tau, None, g).h) / (2 * eps)
    np.testing.assert_allclose(dz, numeric, atol=1e-9)


def test_input_gradient_is_surrogate_weighted():
    z, g, rng = _node(8)
    dga = rng.standard_normal(K)
    dgb = rng.standard_normal(K)
    record = forward_node(z, HARD_ST, 2.0, None, g)
    _, da, db = backward_node(record, 0.5, 2.0, dga, dgb)
    w = softmax_temp(z, 2.0)
    assert da == pytest.approx(0.5 * np.sum(w * dga))
    assert db == pytest.approx(0.5 * np.sum(w * dgb))


def test_hard_methods_retemper_and_mixtures_refuse():
    z, g, _ = _node(9)
    hard = forward_node(z, HARD_ST, 1.0, None, g)
    np.testing.assert_allclose(surrogate_weights(hard, 3.0), softmax_temp(z, 3.0))
    soft = forward_node(z, SOFT_MIX, 1.0, None, g)
    with pytest.raises(ValueError, match="one temperature"):
        surrogate_weights(soft, 3.0)


def test_hard_st_has_no_selection_gap():
    z, g, _ = _node(10, n=500)
    gap = node_selection_gap(z, HARD_ST, 0.3, g)
    assert np.all(gap.value == 0.0)


def test_gumbel_st_reports_expected_gap():
    z, g, rng = _node(11)
    gap = node_selection_gap(z, GUMBEL_ST, 1.0, g, noise=sample_gumbel(K, rng))
    p = softmax_temp(z, 1.0)
    g_star = g[np.argmax(z)]
    assert gap.expected == pytest.approx(np.sum(p * (g - g_star)))


@pytest.mark.parametrize("method", ALL_METHODS, ids=lambda m: m.name)
def test_selection_gap_respects_bound(method):
    n = 100000
    z, g, rng = _node(12, n=n)
    z = z * rng.uniform(0.1, 5.0, (n, 1))
    noise = sample_gumbel(K, rng, (n,)) if method.uses_noise else None
    tau = 0.7
    record = forward_node(z, method, tau, noise, g)
    value = node_selection_gap(z, method, tau, g, noise=noise).value
    bound = selection_gap_bound(record, z)
    assert np.all(np.abs(value) <= bound + 1e-12)


if __name__ == "__main__":
    print("🎲 Testing selection nodes...")
    pytest.main([__file__, "-v"])
