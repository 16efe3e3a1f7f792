"""
Measurement instruments: the three-way gap decomposition, commitment, gate usage
and the first-order loss-gap diagnostic.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from gate_algebra import GATES, NUM_GATES, computation_gap_empirical
from network import EvalMode, NetworkParams, forward_eval_mode, predict
from selection import MethodConfig, argmax_select, softmax_temp

logger = logging.getLogger(__name__)

PEAK_WINDOWS = ("all", "last80")


@dataclass(frozen=True)
class GapReport:
    a_method: float
    a_soft: float
    a_hard: float

    @property
    def selection_gap(self) -> float:
        return self.a_method - self.a_soft

    @property
    def computation_gap(self) -> float:
        return self.a_soft - self.a_hard

    @property
    def total_gap(self) -> float:
        # telescoped, so the decomposition holds exactly in floating point
        return self.selection_gap + self.computation_gap

    def as_percent(self) -> Dict[str, float]:
        return {
            "selection_gap": 100.0 * self.selection_gap,
            "computation_gap": 100.0 * self.computation_gap,
            "total_gap": 100.0 * self.total_gap,
        }


@dataclass
class CommitmentReport:
    per_layer: List[float]
    network_mean: float


@dataclass
class GateUsageHistogram:
    per_layer: np.ndarray   # (L, 16) counts
    total: np.ndarray       # (16,) counts

    @property
    def node_count(self) -> int:
        return int(self.total.sum())

    def fractions(self) -> np.ndarray:
        return self.total / max(self.node_count, 1)

    def as_dict(self) -> Dict[str, int]:
        return {spec.name: int(count) for spec, count in zip(GATES, self.total)}

    def chi_square_uniform(self) -> float:
        """Pearson chi-square statistic of the total counts against 16 equal cells."""
        expected = self.node_count / NUM_GATES
        return float(np.sum((self.total - expected) ** 2) / expected)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(predict(logits) == labels))


def evaluate_three_ways(
    network: NetworkParams,
    features: np.ndarray,
    labels: np.ndarray,
    method: MethodConfig,
    tau: float,
    rng: Optional[np.random.Generator] = None,
    repeats: int = 1,
) -> GapReport:
    """
    A_method, A_soft and A_hard on one labelled set. A stochastic method's A_method
    is one fresh-noise pass, or the mean over repeats passes.
    """
    if np.asarray(labels).size == 0:
        raise ValueError("evaluation set is empty")
    passes = repeats if method.uses_noise else 1
    a_method = float(np.mean([
        accuracy(forward_eval_mode(network, features, EvalMode.METHOD, method, tau, rng=rng), labels)
        for _ in range(passes)
    ]))
    a_soft = accuracy(forward_eval_mode(network, features, EvalMode.SOFT_ARGMAX), labels)
    a_hard = accuracy(forward_eval_mode(network, features, EvalMode.HARD_ARGMAX), labels)
    return GapReport(a_method=a_method, a_soft=a_soft, a_hard=a_hard)


def commitment_by_layer(network: NetworkParams) -> CommitmentReport:
    per_node = [np.max(softmax_temp(z, 1.0), axis=-1) for z in network.logits()]
    return CommitmentReport(
        per_layer=[float(np.mean(c)) for c in per_node],
        network_mean=float(np.mean(np.concatenate(per_node))),
    )


def gate_usage(network: NetworkParams) -> GateUsageHistogram:
    per_layer = np.stack([
        np.bincount(np.atleast_1d(argmax_select(z)), minlength=NUM_GATES) for z in network.logits()
    ])
    return GateUsageHistogram(per_layer=per_layer, total=per_layer.sum(axis=0))


def loss_gap_bound_value(sigma_y, winner_weights) -> np.ndarray:
    """
    2 (1 - sigma_y) * max_c sum_{n in G_c} (1 - w_{n,i*}), with winner_weights of
    shape (C, k) holding w_{n,i*} group by group.
    """
    uncommitted = np.max(np.sum(1.0 - np.asarray(winner_weights, dtype=np.float64), axis=-1))
    return 2.0 * (1.0 - np.asarray(sigma_y, dtype=np.float64)) * uncommitted


def loss_gap_bound(network: NetworkParams, features: np.ndarray, labels: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Per-sample first-order bound on the training/deployment loss difference."""
    groupsum = network.groupsum
    z_last = network.layers[-1].logits
    w = softmax_temp(z_last, tau)
    winner_weights = np.max(w, axis=-1).reshape(groupsum.C, groupsum.k)

    logits = forward_eval_mode(network, features, EvalMode.HARD_ARGMAX)
    sigma = softmax_temp(logits, 1.0)
    sigma_y = sigma[np.arange(sigma.shape[0]), np.asarray(labels, dtype=np.int64)]
    return loss_gap_bound_value(sigma_y, winner_weights)


def signed_peak(values) -> float:
    """Value with the largest magnitude, sign preserved; the first one on ties."""
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        raise ValueError("peak of an empty sequence is undefined")
    return float(array[int(np.argmax(np.abs(array)))])


def peak_gap(log, window: str = "all", column: str = "selection_gap") -> float:
    values = log.column(column)
    if values.size == 0:
        raise ValueError("peak gap of an empty metrics log is undefined")
    if window == "last80":
        values = values[int(0.2 * values.size):]
    elif window != "all":
        raise ValueError(f"Unknown peak window '{window}'; expected one of {PEAK_WINDOWS}")
    return signed_peak(values)


def final_gap(log, column: str = "selection_gap") -> float:
    values = log.column(column)
    if values.size == 0:
        raise ValueError("final gap of an empty metrics log is undefined")
    return float(values[-1])


def computation_gap_by_gate(features: np.ndarray, n: int = 100000, seed: int = 0) -> Dict[str, float]:
    """Empirical computation gap of every gate with inputs drawn from a feature distribution."""
    values = np.asarray(features, dtype=np.float64).ravel()
    return {spec.name: computation_gap_empirical(spec, values, n, seed) for spec in GATES}
