"""
Per-node discrete selection: the four forward modes, Gumbel sampling and the
straight-through surrogate gradient shared by all of them.

All functions work on the last axis, so a node is z of shape (K,) and a batch of
nodes is z of shape (..., K).
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

GUMBEL_EPS = 1e-12


class ForwardKind(Enum):
    MIXTURE = "mixture"
    HARD = "hard"


class NoiseKind(Enum):
    NONE = "none"
    GUMBEL = "gumbel"


_METHOD_NAMES = {
    (ForwardKind.MIXTURE, NoiseKind.NONE): "soft-mix",
    (ForwardKind.MIXTURE, NoiseKind.GUMBEL): "soft-gumbel",
    (ForwardKind.HARD, NoiseKind.NONE): "hard-st",
    (ForwardKind.HARD, NoiseKind.GUMBEL): "gumbel-st",
}


@dataclass(frozen=True)
class MethodConfig:
    """One cell of the forward (mixture|hard) x noise (none|gumbel) factorial."""
    forward_kind: ForwardKind
    noise_kind: NoiseKind
    per_sample_noise: bool = False

    @classmethod
    def from_name(cls, name: str, per_sample_noise: bool = False) -> "MethodConfig":
        for (forward_kind, noise_kind), method_name in _METHOD_NAMES.items():
            if method_name == name:
                return cls(forward_kind, noise_kind, per_sample_noise)
        raise ValueError(f"Unknown method '{name}'; expected one of {', '.join(_METHOD_NAMES.values())}")

    @property
    def name(self) -> str:
        return _METHOD_NAMES[(self.forward_kind, self.noise_kind)]

    @property
    def is_hard(self) -> bool:
        return self.forward_kind is ForwardKind.HARD

    @property
    def uses_noise(self) -> bool:
        return self.noise_kind is NoiseKind.GUMBEL

    @property
    def temperature_role(self) -> str:
        # mixture: one tau forward and backward; hard: tau_b only shapes gradients
        return "backward-only" if self.is_hard else "shared"


SOFT_MIX = MethodConfig(ForwardKind.MIXTURE, NoiseKind.NONE)
SOFT_GUMBEL = MethodConfig(ForwardKind.MIXTURE, NoiseKind.GUMBEL)
HARD_ST = MethodConfig(ForwardKind.HARD, NoiseKind.NONE)
GUMBEL_ST = MethodConfig(ForwardKind.HARD, NoiseKind.GUMBEL)
ALL_METHODS = (SOFT_MIX, SOFT_GUMBEL, HARD_ST, GUMBEL_ST)


@dataclass
class NodeForwardRecord:
    """
    h: forward output; weights: mixture weights (mixture methods) or the ST surrogate
    softmax (hard methods); winner: selected index for hard methods; scores: z or z + G,
    the values weights and winner were computed from.
    """
    h: np.ndarray
    weights: np.ndarray
    winner: Optional[np.ndarray]
    gate_outputs: np.ndarray
    scores: np.ndarray
    method: MethodConfig
    temperature: float


@dataclass
class SelectionGap:
    value: np.ndarray
    # Gumbel-ST only: sum_{i != i*} p_i (g_i - g_{i*}) with p = softmax(z)
    expected: Optional[np.ndarray] = None


def _check_temperature(tau: float, name: str = "tau"):
    if not np.isfinite(tau) or tau <= 0:
        raise ValueError(f"{name} must be a positive finite real, got {tau}")


def softmax_temp(z, tau: float) -> np.ndarray:
    """softmax(z / tau) along the last axis, with max-subtraction."""
    _check_temperature(tau)
    scaled = np.asarray(z, dtype=np.float64) / tau
    if not np.all(np.isfinite(scaled)):
        raise ValueError("Selection logits must be finite")
    scaled = scaled - np.max(scaled, axis=-1, keepdims=True)
    expd = np.exp(scaled)
    return expd / np.sum(expd, axis=-1, keepdims=True)


def sample_gumbel(K: int, rng: np.random.Generator, size: Tuple[int, ...] = ()) -> np.ndarray:
    """i.i.d. standard Gumbel draws of shape size + (K,)."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    u = rng.random(tuple(size) + (K,))
    u = np.clip(u, GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    return -np.log(-np.log(u))


def argmax_select(z) -> np.ndarray:
    """Index of the maximum along the last axis; ties go to the lowest index."""
    out = np.argmax(np.asarray(z), axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def _check_noise(method: MethodConfig, noise):
    if method.uses_noise and noise is None:
        raise ValueError(f"Method {method.name} needs a Gumbel noise vector")
    if not method.uses_noise and noise is not None:
        raise ValueError(f"Method {method.name} takes no noise, but noise was given")


def _pick(values: np.ndarray, index, other_shape: Tuple[int, ...]) -> np.ndarray:
    """values[..., index] with values, index and other_shape broadcast together."""
    shape = np.broadcast_shapes(values.shape, other_shape)
    values = np.broadcast_to(values, shape)
    index = np.broadcast_to(np.asarray(index)[..., None], shape[:-1] + (1,))
    return np.take_along_axis(values, index, axis=-1)[..., 0]


def forward_node(z, method: MethodConfig, tau: float, noise, g) -> NodeForwardRecord:
    """
    Soft-Mix:    h = sum softmax(z/tau) g
    Soft-Gumbel: h = sum softmax((z+G)/tau) g
    Hard-ST:     h = g[argmax z],     w = softmax(z/tau_b)
    Gumbel-ST:   h = g[argmax(z+G)],  w = softmax((z+G)/tau_b)
    """
    _check_noise(method, noise)
    z = np.asarray(z, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1] != z.shape[-1]:
        raise ValueError(f"gate outputs have {g.shape[-1]} entries, logits have {z.shape[-1]}")
    if z.shape[-1] < 2:
        raise ValueError("a selection node needs K >= 2 candidates")

    scores = z if noise is None else z + np.asarray(noise, dtype=np.float64)
    weights = softmax_temp(scores, tau)
    if method.is_hard:
        winner = np.asarray(argmax_select(scores))
        h = _pick(g, winner, scores.shape)
    else:
        winner = None
        h = np.sum(weights * g, axis=-1)
    return NodeForwardRecord(h=h, weights=weights, winner=winner, gate_outputs=g,
                             scores=scores, method=method, temperature=float(tau))


def surrogate_weights(record: NodeForwardRecord, tau_b: float) -> np.ndarray:
    """Weights of the backward surrogate at tau_b; only hard methods may re-temper."""
    _check_temperature(tau_b, "tau_b")
    if tau_b == record.temperature:
        return record.weights
    if not record.method.is_hard:
        raise ValueError(
            f"{record.method.name} uses one temperature forward and backward "
            f"(forward tau={record.temperature}, backward tau={tau_b})"
        )
    return softmax_temp(record.scores, tau_b)


def backward_node(record: NodeForwardRecord, delta, tau_b: float, dgate_da, dgate_db):
    """
    dz_j = (delta / tau_b) * w_j * (g_j - hbar),  hbar = sum_i w_i g_i
    da   = delta * sum_i w_i dg_i/da,  db likewise.
    """
    w = surrogate_weights(record, tau_b)
    g = record.gate_outputs
    delta = np.asarray(delta, dtype=np.float64)
    hbar = np.sum(w * g, axis=-1, keepdims=True)
    dz = (delta[..., None] / tau_b) * w * (g - hbar)
    da = delta * np.sum(w * np.asarray(dgate_da, dtype=np.float64), axis=-1)
    db = delta * np.sum(w * np.asarray(dgate_db, dtype=np.float64), axis=-1)
    return dz, da, db


def effective_weights(record: NodeForwardRecord) -> np.ndarray:
    """Weights the forward output is actually built from (one-hot for hard methods)."""
    if not record.method.is_hard:
        return record.weights
    K = record.scores.shape[-1]
    return (np.arange(K) == np.asarray(record.winner)[..., None]).astype(np.float64)


def node_selection_gap(z, method: MethodConfig, tau: float, g, noise=None) -> SelectionGap:
    """Delta h_sel = h_method - g[argmax z]."""
    record = forward_node(z, method, tau, noise, g)
    g = record.gate_outputs
    z = np.asarray(z, dtype=np.float64)
    g_star = _pick(g, argmax_select(z), z.shape)
    value = record.h - g_star
    expected = None
    if method.is_hard and method.uses_noise:
        p = softmax_temp(z, 1.0)
        expected = np.sum(p * (g - g_star[..., None]), axis=-1)
    return SelectionGap(value=value, expected=expected)


def selection_gap_bound(record: NodeForwardRecord, z) -> np.ndarray:
    """(1 - w_{i*}) * max_i |g_i - g_{i*}| with w the effective weights."""
    w = effective_weights(record)
    z = np.asarray(z, dtype=np.float64)
    i_star = argmax_select(z)
    g = record.gate_outputs
    g_star = _pick(g, i_star, w.shape)
    w_star = _pick(w, i_star, z.shape)
    deviation = np.max(np.abs(np.broadcast_to(g, np.broadcast_shapes(g.shape, w.shape)) - g_star[..., None]), axis=-1)
    return (1.0 - w_star) * deviation
