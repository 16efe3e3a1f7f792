"""
Training: cross-entropy loss, the straight-through backward pass through a whole
network, Adam, the CAGE temperature controller and the training loop.
"""

import csv
import json
import logging
from dataclasses import dataclass, field, asdict, fields
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from error_handler import ConfigError, NumericAbortError
from gate_algebra import GATE_COEFFS, NUM_GATES, TRUTH_TABLES, GateLike, get_gate
from metrics import accuracy, evaluate_three_ways
from network import ForwardTrace, NetworkParams, draw_layer_noise, forward, forward_eval_mode, EvalMode
from selection import HARD_ST, MethodConfig, backward_node, forward_node, softmax_temp

logger = logging.getLogger(__name__)

# independent RNG streams derived from the run seed
_BATCH_STREAM = 1
_EVAL_STREAM = 2


@dataclass(frozen=True)
class CageSettings:
    tau_min: float = 0.5
    tau_max: float = 3.0
    beta: float = 0.99

    def validate(self):
        if not 0 < self.tau_min <= self.tau_max:
            raise ConfigError("cage_tau_min", f"need 0 < tau_min <= tau_max, got {self.tau_min}, {self.tau_max}")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("cage_beta", f"EMA coefficient must be in [0, 1), got {self.beta}")


@dataclass
class TrainConfig:
    method: MethodConfig
    learning_rate: float = 0.01
    batch_size: int = 512
    iterations: int = 10000
    eval_every: int = 500
    tau: float = 1.0
    seed: int = 0
    cage_enabled: bool = False
    cage: CageSettings = field(default_factory=CageSettings)
    eval_train_samples: int = 2000
    eval_test_samples: Optional[int] = None
    eval_repeats: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigError("lr", f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError("batch", f"batch size must be positive, got {self.batch_size}")
        if self.iterations < 0:
            raise ConfigError("iters", f"iteration count must be >= 0, got {self.iterations}")
        if self.eval_every < 1:
            raise ConfigError("eval_every", f"evaluation interval must be positive, got {self.eval_every}")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ConfigError("tau", f"temperature must be a positive finite real, got {self.tau}")
        if self.eval_repeats < 1:
            raise ConfigError("eval_repeats", f"must be >= 1, got {self.eval_repeats}")
        if self.cage_enabled:
            if not self.method.is_hard:
                raise ConfigError(
                    "cage", f"CAGE drives the backward temperature of hard methods only, not {self.method.name}"
                )
            self.cage.validate()


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def create_adam_state(params: Sequence[np.ndarray], beta1: float = 0.9, beta2: float = 0.999,
                      epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        beta1=beta1, beta2=beta2, epsilon=epsilon,
    )


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float) -> AdamState:
    """Bias-corrected Adam, updating params and moments in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must have the same length")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    step_size = lr / bc1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= step_size * m / (np.sqrt(v * (1.0 / bc2)) + state.epsilon)
    return state


@dataclass
class CageState:
    c_ema: float
    tau_b: float
    settings: CageSettings
    K: int = NUM_GATES


def create_cage_state(settings: CageSettings = CageSettings(), K: int = NUM_GATES) -> CageState:
    # c_ema starts at the uniform-softmax confidence, so tau_b starts at tau_max
    return CageState(c_ema=1.0 / K, tau_b=settings.tau_max, settings=settings, K=K)


def cage_temperature(c_ema: float, settings: CageSettings, K: int = NUM_GATES) -> float:
    """Linear map of confidence [1/K, 1] onto [tau_max, tau_min], clamped."""
    floor = 1.0 / K
    span = settings.tau_max - settings.tau_min
    tau_b = settings.tau_max - span * (c_ema - floor) / (1.0 - floor)
    return float(min(max(tau_b, settings.tau_min), settings.tau_max))


def cage_update(state: CageState, c: float) -> float:
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"confidence must be in [0, 1], got {c}")
    beta = state.settings.beta
    state.c_ema = beta * state.c_ema + (1.0 - beta) * c
    state.tau_b = cage_temperature(state.c_ema, state.settings, state.K)
    return state.tau_b


def cage_confidence(network: Union[NetworkParams, Sequence[np.ndarray]]) -> float:
    """Mean over all selection nodes of max_i softmax(z_n)_i."""
    logits = network.logits() if isinstance(network, NetworkParams) else list(network)
    total = 0.0
    count = 0
    for z in logits:
        total += float(np.sum(np.max(softmax_temp(z, 1.0), axis=-1)))
        count += z.shape[0]
    return total / count


def cross_entropy_loss_and_grad(y, label):
    """
    Mean cross-entropy over the batch and dL/dy = (softmax(y) - onehot) / B.
    A 1-D y with a scalar label is a single sample (no batch averaging).
    """
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    if single:
        y = y[None, :]
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if labels.shape[0] != y.shape[0]:
        raise ValueError(f"{y.shape[0]} logit rows but {labels.shape[0]} labels")
    if np.any(labels < 0) or np.any(labels >= y.shape[1]):
        raise ValueError(f"labels must be in [0, {y.shape[1]})")
    shifted = y - np.max(y, axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    rows = np.arange(y.shape[0])
    losses = log_norm - shifted[rows, labels]
    sigma = np.exp(shifted - log_norm[:, None])
    grad = sigma
    grad[rows, labels] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(np.mean(losses)), grad / y.shape[0]


def _layer_backward(record, dh: np.ndarray, tau_b: float, method: MethodConfig, forward_tau: float):
    """Logit gradient (W, K) and input gradients (B, W) for one layer."""
    if tau_b == forward_tau:
        w = record.weights
    elif method.is_hard:
        w = softmax_temp(record.scores, tau_b)
    else:
        raise ValueError(f"{method.name} uses one temperature forward and backward")
    surrogate = w @ GATE_COEFFS
    a, b = record.a, record.b
    if w.ndim == 2:
        moments = np.stack([dh.sum(axis=0), (dh * a).sum(axis=0), (dh * b).sum(axis=0),
                            (dh * a * b).sum(axis=0)], axis=1)
        dz = w * (moments @ GATE_COEFFS.T - np.sum(surrogate * moments, axis=1, keepdims=True)) / tau_b
    else:
        # per-sample noise: every sample has its own surrogate weights
        feats = np.stack([np.ones_like(a), a, b, a * b], axis=-1)
        g = feats @ GATE_COEFFS.T
        hbar = np.sum(surrogate * feats, axis=-1, keepdims=True)
        dz = np.sum(w * (g - hbar) * dh[..., None], axis=0) / tau_b
    da = dh * (surrogate[..., 1] + surrogate[..., 3] * b)
    db = dh * (surrogate[..., 2] + surrogate[..., 3] * a)
    return dz, da, db


def backward_network(network: NetworkParams, trace: ForwardTrace, dy: np.ndarray, tau_b: float) -> List[np.ndarray]:
    """Gradients of the loss with respect to every layer's logits."""
    if not (np.isfinite(tau_b) and tau_b > 0):
        raise ValueError(f"tau_b must be a positive finite real, got {tau_b}")
    if len(trace.layers) != len(network.layers):
        raise ValueError("trace does not belong to this network")
    if not trace.method.is_hard and tau_b != trace.temperature:
        raise ValueError(
            f"{trace.method.name} uses one temperature forward and backward "
            f"(forward tau={trace.temperature}, backward tau={tau_b})"
        )
    groupsum = network.groupsum
    dy = np.asarray(dy, dtype=np.float64)
    dh = np.repeat(dy, groupsum.k, axis=1) / groupsum.tau

    grads: List[Optional[np.ndarray]] = [None] * len(network.layers)
    for index in range(len(network.layers) - 1, -1, -1):
        layer = network.layers[index]
        dz, da, db = _layer_backward(trace.layers[index], dh, tau_b, trace.method, trace.temperature)
        grads[index] = dz
        if index > 0:
            prev_width = network.layers[index - 1].width
            dx = np.zeros((prev_width, dh.shape[0]))
            np.add.at(dx, layer.src_a, da.T)
            np.add.at(dx, layer.src_b, db.T)
            dh = dx.T
    return grads


@dataclass
class MetricsRow:
    iteration: int
    loss: float
    train_accuracy: float
    a_method: float
    a_soft: float
    a_hard: float
    selection_gap: float
    computation_gap: float
    total_gap: float
    confidence: float
    tau_b: float


METRIC_FIELDS = [f.name for f in fields(MetricsRow)]


@dataclass
class MetricsLog:
    rows: List[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow):
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError(f"rows must be ordered by iteration ({row.iteration} after {self.rows[-1].iteration})")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        if name not in METRIC_FIELDS:
            raise KeyError(f"Unknown metrics column '{name}'")
        return np.array([getattr(row, name) for row in self.rows], dtype=np.float64)

    def to_jsonl(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as handle:
            for row in self.rows:
                handle.write(json.dumps(asdict(row)) + "\n")
        return path

    @classmethod
    def from_jsonl(cls, path: Union[str, Path]) -> "MetricsLog":
        log = cls()
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    log.append(MetricsRow(**json.loads(line)))
        return log

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=METRIC_FIELDS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(asdict(row))
        return path


def _eval_subset(features: np.ndarray, labels: np.ndarray, limit: Optional[int], rng: np.random.Generator):
    if limit is None or limit >= features.shape[0]:
        return features, labels
    idx = np.sort(rng.choice(features.shape[0], size=limit, replace=False))
    return features[idx], labels[idx]


def _logit_norms(network: NetworkParams) -> List[float]:
    return [float(np.linalg.norm(z)) if np.all(np.isfinite(z)) else float("nan") for z in network.logits()]


def _numeric_abort(reason: str, step: int, tau_b: float, network: NetworkParams, loss: Optional[float] = None):
    details = {"step": step, "tau_b": tau_b, "loss": loss, "logit_norms": _logit_norms(network)}
    logger.error("%s at step %d (tau_b=%s): %s", reason.capitalize(), step, tau_b, details)
    raise NumericAbortError(f"{reason} at step {step}", details)


def train(
    config: TrainConfig,
    train_set,
    test_set,
    network: NetworkParams,
    callback: Optional[Callable[[MetricsRow], None]] = None,
) -> MetricsLog:
    """
    Train network in place. After every eval_every updates, and after the last one,
    a MetricsRow with the three-way gap report on the test set is logged.
    """
    config.validate()
    method = config.method
    log = MetricsLog()
    if config.iterations == 0:
        return log

    n = train_set.features.shape[0]
    batch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _BATCH_STREAM]))
    subset_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _EVAL_STREAM]))
    train_x, train_y = _eval_subset(train_set.features, train_set.labels, config.eval_train_samples, subset_rng)
    test_x, test_y = _eval_subset(test_set.features, test_set.labels, config.eval_test_samples, subset_rng)

    adam = create_adam_state(network.logits(), config.beta1, config.beta2, config.epsilon)
    cage = create_cage_state(config.cage) if config.cage_enabled else None
    tau_b = config.tau

    for step in range(config.iterations):
        if not all(np.all(np.isfinite(z)) for z in network.logits()):
            _numeric_abort("non-finite gate logits", step, tau_b, network)
        idx = batch_rng.integers(0, n, config.batch_size)
        x = train_set.features[idx]
        labels = train_set.labels[idx]
        if cage is not None:
            tau_b = cage_update(cage, cage_confidence(network))
        noise = None
        if method.uses_noise:
            noise = draw_layer_noise(network, config.seed, step,
                                     config.batch_size if method.per_sample_noise else None)

        logits, trace = forward(network, x, method, tau_b, noise=noise)
        loss, dy = cross_entropy_loss_and_grad(logits, labels)
        if not np.isfinite(loss):
            _numeric_abort("non-finite loss", step, tau_b, network, loss)
        grads = backward_network(network, trace, dy, tau_b)
        if not all(np.all(np.isfinite(g)) for g in grads):
            _numeric_abort("non-finite gradients", step, tau_b, network, loss)
        adam_step(network.logits(), grads, adam, config.learning_rate)

        completed = step + 1
        if completed % config.eval_every == 0 or completed == config.iterations:
            eval_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _EVAL_STREAM, completed]))
            report = evaluate_three_ways(network, test_x, test_y, method, tau_b, eval_rng,
                                         repeats=config.eval_repeats)
            train_logits = forward_eval_mode(network, train_x, EvalMode.METHOD, method, tau_b, rng=eval_rng)
            row = MetricsRow(
                iteration=completed,
                loss=loss,
                train_accuracy=accuracy(train_logits, train_y),
                a_method=report.a_method,
                a_soft=report.a_soft,
                a_hard=report.a_hard,
                selection_gap=report.selection_gap,
                computation_gap=report.computation_gap,
                total_gap=report.total_gap,
                confidence=cage_confidence(network),
                tau_b=float(tau_b),
            )
            log.append(row)
            logger.info(
                "iter %d loss %.4f A_method %.4f A_soft %.4f A_hard %.4f tau_b %.3f confidence %.3f",
                row.iteration, row.loss, row.a_method, row.a_soft, row.a_hard, row.tau_b, row.confidence,
            )
            if callback is not None:
                callback(row)
    return log


def convergence_iterations(log: MetricsLog, target: float, column: str = "a_hard") -> Optional[int]:
    """First logged iteration whose accuracy column reaches target, or None."""
    for row in log.rows:
        if getattr(row, column) >= target:
            return row.iteration
    return None


def single_node_convergence(
    tau_b: float,
    target_gate: GateLike = "XOR",
    confidence: float = 0.99,
    lr: float = 0.01,
    max_steps: int = 200000,
) -> Optional[int]:
    """
    Steps for one Hard-ST node (K = 16, zero logits, Adam) to reach surrogate
    confidence max softmax(z / tau_b) >= confidence when trained toward target_gate
    over the four binary corners.
    """
    target = np.asarray(TRUTH_TABLES[get_gate(target_gate).id], dtype=np.float64)
    # gate outputs at the corners (0,0), (0,1), (1,0), (1,1); soft equals hard there
    g = TRUTH_TABLES.T.astype(np.float64)
    delta = -(2.0 * target - 1.0) / 4.0
    zeros = np.zeros_like(g)

    z = np.zeros(NUM_GATES)
    state = create_adam_state([z])
    for step in range(max_steps):
        if np.max(softmax_temp(z, tau_b)) >= confidence:
            return step
        record = forward_node(z, HARD_ST, tau_b, None, g)
        dz, _, _ = backward_node(record, delta, tau_b, zeros, zeros)
        adam_step([z], [dz.sum(axis=0)], state, lr)
    return None


@dataclass
class ConvergenceFit:
    taus: List[float]
    steps: List[Optional[int]]
    slope: float
    intercept: float
    r: float


def convergence_scaling(
    taus: Sequence[float] = (0.25, 0.5, 1.0, 2.0, 4.0),
    target_gate: GateLike = "XOR",
    confidence: float = 0.99,
    lr: float = 0.01,
    max_steps: int = 200000,
) -> ConvergenceFit:
    """Least-squares line of steps-to-confidence against tau_b."""
    steps = [single_node_convergence(t, target_gate, confidence, lr, max_steps) for t in taus]
    reached = [(t, s) for t, s in zip(taus, steps) if s is not None]
    if len(reached) < 2:
        raise ValueError(f"only {len(reached)} temperatures reached confidence {confidence} within {max_steps} steps")
    x = np.array([t for t, _ in reached], dtype=np.float64)
    y = np.array([s for _, s in reached], dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    r = float(np.corrcoef(x, y)[0, 1])
    return ConvergenceFit(taus=list(taus), steps=steps, slope=float(slope), intercept=float(intercept), r=r)
