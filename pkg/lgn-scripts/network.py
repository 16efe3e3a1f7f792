"""
Flat logic gate networks: equal-width layers of selection nodes over random fixed
wiring, read out by GroupSum (contiguous class groups of the last layer, summed and
divided by tau_gs).
"""

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from error_handler import ConfigError, DataError, ShapeError
from gate_algebra import GATE_COEFFS, NUM_GATES, TRUTH_TABLES, threshold
from selection import MethodConfig, argmax_select, sample_gumbel, softmax_temp

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lgn-checkpoint"
CHECKPOINT_VERSION = 1
DEFAULT_CHUNK = 1024


class EvalMode(Enum):
    METHOD = "method"
    SOFT_ARGMAX = "soft-gate-argmax"
    HARD_ARGMAX = "hard-gate-argmax"


@dataclass(frozen=True)
class Architecture:
    input_width: int
    layers: int
    width: int
    classes: int
    K: int = NUM_GATES

    def validate(self):
        if self.layers < 1:
            raise ConfigError("layers", f"need at least one layer, got {self.layers}")
        if self.input_width < 2:
            raise ConfigError("input_width", f"need at least two input features, got {self.input_width}")
        if self.classes < 2:
            raise ConfigError("classes", f"need at least two classes, got {self.classes}")
        if self.width < self.classes:
            raise ConfigError("width", f"width {self.width} is smaller than the class count {self.classes}")
        if self.width % self.classes != 0:
            raise ConfigError("width", f"width {self.width} is not divisible by the class count {self.classes}")
        if self.K != NUM_GATES:
            raise ConfigError("K", f"only K = {NUM_GATES} two-input gates are supported, got {self.K}")


@dataclass(frozen=True)
class GroupSumConfig:
    C: int
    k: int
    tau: float

    def group_of(self, node: int) -> int:
        return node // self.k


def groupsum_tau(C: int, k: int) -> float:
    """alpha(C) * sqrt(k) with alpha(C) = 1.42 / (ln(C - 1) + 0.7)."""
    if C < 2:
        raise ValueError(f"GroupSum needs C >= 2 classes, got {C}")
    if k < 1:
        raise ValueError(f"GroupSum needs k >= 1 nodes per class, got {k}")
    alpha = 1.42 / (math.log(C - 1) + 0.7)
    return alpha * math.sqrt(k)


@dataclass
class GateLayer:
    src_a: np.ndarray    # (W,) int64 indices into the previous layer
    src_b: np.ndarray
    logits: np.ndarray   # (W, 16) float64, trained in place

    @property
    def width(self) -> int:
        return int(self.src_a.shape[0])


@dataclass
class NetworkParams:
    layers: List[GateLayer]
    arch: Architecture
    groupsum: GroupSumConfig
    seed: Optional[int] = None

    @property
    def node_count(self) -> int:
        return sum(layer.width for layer in self.layers)

    def logits(self) -> List[np.ndarray]:
        return [layer.logits for layer in self.layers]

    def winners(self) -> List[np.ndarray]:
        return [argmax_select(layer.logits) for layer in self.layers]


@dataclass
class LayerRecord:
    """Vectorised node records of one layer for a batch."""
    a: np.ndarray                  # (B, W) first inputs
    b: np.ndarray                  # (B, W) second inputs
    scores: np.ndarray             # (W, K) z or z + G, or (B, W, K) with per-sample noise
    weights: np.ndarray            # same shape as scores
    winners: Optional[np.ndarray]  # argmax of scores for hard methods
    coeffs: np.ndarray             # bilinear coefficients actually used forward
    h: np.ndarray                  # (B, W) outputs


@dataclass
class ForwardTrace:
    layers: List[LayerRecord]
    logits: np.ndarray
    method: MethodConfig
    temperature: float


def _validate_wiring(src_a: np.ndarray, src_b: np.ndarray, prev_width: int, layer_index: int):
    if src_a.shape != src_b.shape or src_a.ndim != 1:
        raise ShapeError(f"layer {layer_index}: wiring arrays must be 1-D and equally long")
    for name, src in (("src_a", src_a), ("src_b", src_b)):
        if src.size and (src.min() < 0 or src.max() >= prev_width):
            raise ShapeError(f"layer {layer_index}: {name} index out of range [0, {prev_width})")
    if np.any(src_a == src_b):
        raise ShapeError(f"layer {layer_index}: a node is wired to the same source twice")


def build_network(arch: Architecture, seed: int) -> NetworkParams:
    """Uniform random distinct wiring and N(0, 1) logits, deterministic in seed."""
    arch.validate()
    rng = np.random.default_rng(seed)
    layers = []
    prev_width = arch.input_width
    for _ in range(arch.layers):
        src_a = rng.integers(0, prev_width, arch.width)
        # a nonzero offset modulo the width gives a second source uniform over the others
        src_b = (src_a + rng.integers(1, prev_width, arch.width)) % prev_width
        logits = rng.standard_normal((arch.width, arch.K))
        layers.append(GateLayer(src_a=src_a.astype(np.int64), src_b=src_b.astype(np.int64), logits=logits))
        prev_width = arch.width
    k = arch.width // arch.classes
    groupsum = GroupSumConfig(C=arch.classes, k=k, tau=groupsum_tau(arch.classes, k))
    logger.debug("Built network %s (seed %s, tau_gs %.4f)", arch, seed, groupsum.tau)
    return NetworkParams(layers=layers, arch=arch, groupsum=groupsum, seed=seed)


def network_from_arrays(
    input_width: int,
    wirings: Sequence[Tuple[Sequence[int], Sequence[int]]],
    logits: Sequence[np.ndarray],
    classes: int,
    groupsum_temperature: Optional[float] = None,
) -> NetworkParams:
    """Network with explicit wiring and logits; the last width must split into classes."""
    if len(wirings) != len(logits) or not wirings:
        raise ShapeError("need one (wiring, logits) pair per layer")
    layers = []
    prev_width = input_width
    for index, ((src_a, src_b), z) in enumerate(zip(wirings, logits)):
        src_a = np.asarray(src_a, dtype=np.int64)
        src_b = np.asarray(src_b, dtype=np.int64)
        z = np.array(z, dtype=np.float64)
        _validate_wiring(src_a, src_b, prev_width, index)
        if z.shape != (src_a.shape[0], NUM_GATES):
            raise ShapeError(f"layer {index}: logits must have shape ({src_a.shape[0]}, {NUM_GATES}), got {z.shape}")
        layers.append(GateLayer(src_a=src_a, src_b=src_b, logits=z))
        prev_width = src_a.shape[0]
    widths = {layer.width for layer in layers}
    arch = Architecture(input_width=input_width, layers=len(layers), width=max(widths), classes=classes)
    if prev_width % classes != 0:
        raise ConfigError("classes", f"last layer width {prev_width} is not divisible by {classes}")
    k = prev_width // classes
    tau = groupsum_tau(classes, k) if groupsum_temperature is None else float(groupsum_temperature)
    return NetworkParams(layers=layers, arch=arch, groupsum=GroupSumConfig(C=classes, k=k, tau=tau))


def draw_layer_noise(
    network: NetworkParams,
    seed: int,
    step: int,
    batch_size: Optional[int] = None,
) -> List[np.ndarray]:
    """
    Gumbel noise per layer, a deterministic function of (seed, step, layer, node).
    Shape (W, K), or (batch_size, W, K) for per-sample noise.
    """
    noise = []
    for index, layer in enumerate(network.layers):
        rng = np.random.default_rng(np.random.SeedSequence([seed, step, index]))
        size = (layer.width,) if batch_size is None else (batch_size, layer.width)
        noise.append(sample_gumbel(NUM_GATES, rng, size))
    return noise


def _bilinear(coeffs: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return coeffs[..., 0] + coeffs[..., 1] * a + coeffs[..., 2] * b + coeffs[..., 3] * (a * b)


def _check_features(network: NetworkParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != network.arch.input_width:
        raise ShapeError(
            f"expected a (samples, {network.arch.input_width}) feature matrix, got shape {x.shape}"
        )
    return x


def groupsum_readout(h_last: np.ndarray, groupsum: GroupSumConfig, scale: bool = True) -> np.ndarray:
    sums = h_last.reshape(h_last.shape[0], groupsum.C, groupsum.k).sum(axis=-1)
    return sums / groupsum.tau if scale else sums


def _layer_forward(layer: GateLayer, x: np.ndarray, method: MethodConfig, tau: float,
                   noise: Optional[np.ndarray]) -> LayerRecord:
    a = x[:, layer.src_a]
    b = x[:, layer.src_b]
    scores = layer.logits if noise is None else layer.logits + noise
    weights = softmax_temp(scores, tau)
    if method.is_hard:
        winners = argmax_select(scores)
        coeffs = GATE_COEFFS[winners]
    else:
        winners = None
        coeffs = weights @ GATE_COEFFS
    h = _bilinear(coeffs, a, b)
    return LayerRecord(a=a, b=b, scores=scores, weights=weights, winners=winners, coeffs=coeffs, h=h)


def forward(
    network: NetworkParams,
    batch: np.ndarray,
    method: MethodConfig,
    tau: float,
    noise: Optional[List[np.ndarray]] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, ForwardTrace]:
    """
    Training forward. tau is the shared temperature for mixture methods and the
    backward-only tau_b for hard methods (it then shapes only trace weights).
    Gumbel methods take explicit per-layer noise or draw it from rng.
    """
    x = _check_features(network, batch).astype(np.float64, copy=False)
    if method.uses_noise:
        if noise is None:
            if rng is None:
                raise ValueError(f"{method.name} needs per-layer noise or an rng")
            noise = [
                sample_gumbel(NUM_GATES, rng, (x.shape[0], layer.width) if method.per_sample_noise else (layer.width,))
                for layer in network.layers
            ]
        if len(noise) != len(network.layers):
            raise ShapeError(f"got noise for {len(noise)} layers, network has {len(network.layers)}")
    elif noise is not None:
        raise ValueError(f"{method.name} takes no noise, but noise was given")

    records = []
    for index, layer in enumerate(network.layers):
        record = _layer_forward(layer, x, method, tau, None if noise is None else noise[index])
        records.append(record)
        x = record.h
    logits = groupsum_readout(x, network.groupsum)
    return logits, ForwardTrace(layers=records, logits=logits, method=method, temperature=float(tau))


def _soft_argmax_logits(network: NetworkParams, x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64, copy=False)
    for layer in network.layers:
        coeffs = GATE_COEFFS[argmax_select(layer.logits)]
        x = _bilinear(coeffs, x[:, layer.src_a], x[:, layer.src_b])
    return groupsum_readout(x, network.groupsum)


def hard_wire_values(network: NetworkParams, bits: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """Per-layer bit outputs and integer class scores of the hard pipeline."""
    x = _check_features(network, bits)
    if not np.all((x == 0) | (x == 1)):
        raise ValueError("hard pipeline expects bits; threshold the features first")
    x = x.astype(np.uint8, copy=False)
    outputs = []
    for layer in network.layers:
        winners = argmax_select(layer.logits)
        x = TRUTH_TABLES[winners, 2 * x[:, layer.src_a] + x[:, layer.src_b]]
        outputs.append(x)
    scores = groupsum_readout(x.astype(np.int64), network.groupsum, scale=False)
    return outputs, scores


def forward_eval_mode(
    network: NetworkParams,
    batch: np.ndarray,
    mode: Union[EvalMode, str],
    method: Optional[MethodConfig] = None,
    tau: float = 1.0,
    rng: Optional[np.random.Generator] = None,
    chunk_size: int = DEFAULT_CHUNK,
) -> np.ndarray:
    """
    Class logits under the three evaluation pipelines:
      method           - the method's training forward (fresh noise from rng)
      soft-gate-argmax - argmax selection, soft gates on raw features
      hard-gate-argmax - argmax selection, inputs thresholded once, hard gates,
                         integer GroupSum divided by tau_gs
    """
    mode = EvalMode(mode)
    x = _check_features(network, batch)
    if mode is EvalMode.METHOD:
        if method is None:
            raise ValueError("mode 'method' needs a MethodConfig")
        shared_noise = None
        if method.uses_noise and not method.per_sample_noise:
            if rng is None:
                raise ValueError(f"{method.name} evaluation needs an rng for fresh noise")
            shared_noise = [sample_gumbel(NUM_GATES, rng, (layer.width,)) for layer in network.layers]

    out = []
    for start in range(0, x.shape[0], chunk_size):
        chunk = x[start:start + chunk_size]
        if mode is EvalMode.METHOD:
            logits, _ = forward(network, chunk, method, tau, noise=shared_noise,
                                rng=rng if shared_noise is None else None)
        elif mode is EvalMode.SOFT_ARGMAX:
            logits = _soft_argmax_logits(network, chunk)
        else:
            _, scores = hard_wire_values(network, threshold(chunk))
            logits = scores / network.groupsum.tau
        out.append(logits)
    if not out:
        return np.zeros((0, network.groupsum.C))
    return np.concatenate(out, axis=0)


def predict(logits: np.ndarray) -> np.ndarray:
    """Class argmax; ties go to the lowest class index."""
    return np.argmax(logits, axis=-1)


def save_checkpoint(network: NetworkParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": asdict(network.arch),
        "groupsum": asdict(network.groupsum),
        "seed": network.seed,
        "layer_widths": [layer.width for layer in network.layers],
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for index, layer in enumerate(network.layers):
        arrays[f"layer{index}_src_a"] = layer.src_a
        arrays[f"layer{index}_src_b"] = layer.src_b
        arrays[f"layer{index}_logits"] = layer.logits
    with open(path, "wb") as handle:
        np.savez_compressed(handle, **arrays)
    return path


def load_checkpoint(path: Union[str, Path]) -> NetworkParams:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}", {"path": str(path)})
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path} is not a logic gate network checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {meta.get('version')} (expected {CHECKPOINT_VERSION})")
        layers = []
        for index in range(len(meta["layer_widths"])):
            layers.append(GateLayer(
                src_a=data[f"layer{index}_src_a"].astype(np.int64),
                src_b=data[f"layer{index}_src_b"].astype(np.int64),
                logits=data[f"layer{index}_logits"].astype(np.float64),
            ))
    return NetworkParams(
        layers=layers,
        arch=Architecture(**meta["arch"]),
        groupsum=GroupSumConfig(**meta["groupsum"]),
        seed=meta.get("seed"),
    )
