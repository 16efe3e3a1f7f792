"""
The deployed hard circuit: extraction from a trained network, sample-parallel
bit-packed evaluation and a plain-text circuit format.

Packing is sample-parallel: word j of feature f holds feature f of samples
64j .. 64j+63, least significant bit first, so every gate is one bitwise
expression per word whatever its type.
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np

from data_loader import enumerate_inputs
from error_handler import CircuitError, ShapeError
from gate_algebra import GateId, NUM_GATES
from network import NetworkParams, forward_eval_mode, EvalMode, hard_wire_values, predict
from selection import argmax_select

logger = logging.getLogger(__name__)

WORD_BITS = 64
CIRCUIT_HEADER = "lgn-circuit"
CIRCUIT_VERSION = 1
EXHAUSTIVE_MAX_WIDTH = 16

_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)

# SWAR popcount constants
_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


WordOp = Callable[[np.ndarray, np.ndarray], np.ndarray]

WORD_OPS: Dict[GateId, WordOp] = {
    GateId.FALSE: lambda a, b: np.zeros_like(a),
    GateId.AND: lambda a, b: a & b,
    GateId.A_AND_NOT_B: lambda a, b: a & ~b,
    GateId.A: lambda a, b: a.copy(),
    GateId.NOT_A_AND_B: lambda a, b: ~a & b,
    GateId.B: lambda a, b: b.copy(),
    GateId.XOR: lambda a, b: a ^ b,
    GateId.OR: lambda a, b: a | b,
    GateId.NOR: lambda a, b: ~(a | b),
    GateId.XNOR: lambda a, b: ~(a ^ b),
    GateId.NOT_B: lambda a, b: ~b,
    GateId.A_OR_NOT_B: lambda a, b: a | ~b,
    GateId.NOT_A: lambda a, b: ~a,
    GateId.NOT_A_OR_B: lambda a, b: ~a | b,
    GateId.NAND: lambda a, b: ~(a & b),
    GateId.TRUE: lambda a, b: np.full_like(a, _ONES),
}


@dataclass
class CompiledCircuit:
    input_width: int
    gates: List[np.ndarray]     # per layer (W,) gate ids
    src_a: List[np.ndarray]     # per layer (W,) indices into the previous layer
    src_b: List[np.ndarray]
    classes: int
    group_size: int

    @property
    def layer_widths(self) -> List[int]:
        return [int(g.shape[0]) for g in self.gates]

    @property
    def gate_count(self) -> int:
        return sum(self.layer_widths)

    def layer_offsets(self) -> List[int]:
        """Global wire id of each layer's first node; inputs occupy 0 .. input_width - 1."""
        offsets = [self.input_width]
        for width in self.layer_widths[:-1]:
            offsets.append(offsets[-1] + width)
        return offsets

    def gate_histogram(self) -> np.ndarray:
        return np.bincount(np.concatenate(self.gates), minlength=NUM_GATES)

    def validate(self):
        if not self.gates:
            raise CircuitError("circuit has no layers")
        prev = self.input_width
        for index, (g, a, b) in enumerate(zip(self.gates, self.src_a, self.src_b)):
            if not (g.shape == a.shape == b.shape):
                raise CircuitError(f"layer {index}: gate and wiring arrays differ in length")
            if g.size and (g.min() < 0 or g.max() >= NUM_GATES):
                raise CircuitError(f"layer {index}: gate id outside [0, {NUM_GATES})")
            for name, src in (("src_a", a), ("src_b", b)):
                if src.size and (src.min() < 0 or src.max() >= prev):
                    raise CircuitError(f"layer {index}: {name} references a wire outside the previous layer")
            prev = g.shape[0]
        if self.classes * self.group_size != prev:
            raise CircuitError(f"{self.classes} groups of {self.group_size} do not cover the last layer ({prev})")


@dataclass
class BitBatch:
    words: np.ndarray    # (features, n_words) little-endian uint64
    n_samples: int

    @property
    def width(self) -> int:
        return int(self.words.shape[0])


@dataclass
class EquivalenceReport:
    passed: bool
    samples: int
    exhaustive: bool
    mismatched_samples: int = 0
    first_mismatch: Optional[Dict[str, int]] = None
    note: str = ""

    def summary(self) -> str:
        if self.samples == 0:
            return "PASS (vacuous: 0 samples)"
        mode = "exhaustive" if self.exhaustive else "random"
        if self.passed:
            return f"PASS on {self.samples} {mode} samples"
        return (f"FAIL on {self.mismatched_samples}/{self.samples} {mode} samples; "
                f"first divergence {self.first_mismatch}")


def pack_bits(bits: np.ndarray) -> BitBatch:
    """(samples, features) bits to sample-parallel words; padding bits are zero."""
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ShapeError(f"expected a (samples, features) bit matrix, got shape {bits.shape}")
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("bit-packing expects only 0/1 values")
    n_samples = bits.shape[0]
    n_words = max(1, -(-n_samples // WORD_BITS))
    packed = np.packbits(bits.T.astype(np.uint8), axis=1, bitorder="little")
    padded = np.zeros((bits.shape[1], n_words * 8), dtype=np.uint8)
    padded[:, :packed.shape[1]] = packed
    return BitBatch(words=padded.view("<u8"), n_samples=n_samples)


def unpack_bits(batch: BitBatch) -> np.ndarray:
    """Inverse of pack_bits: (samples, features) uint8."""
    raw = np.ascontiguousarray(batch.words, dtype="<u8").view(np.uint8)
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, :batch.n_samples]
    return np.ascontiguousarray(bits.T)


def lane_mask(n_samples: int, n_words: int) -> np.ndarray:
    """Per-word mask with a bit set for every real (non-padding) sample."""
    mask = np.zeros(n_words, dtype="<u8")
    full, rest = divmod(n_samples, WORD_BITS)
    mask[:full] = _ONES
    if rest:
        mask[full] = np.uint64((1 << rest) - 1)
    return mask


def popcount64(words: np.ndarray) -> np.ndarray:
    """Set bits per uint64 word."""
    x = np.asarray(words, dtype=np.uint64).copy()
    x -= (x >> np.uint64(1)) & _M1
    x = (x & _M2) + ((x >> np.uint64(2)) & _M2)
    x += x >> np.uint64(4)
    x &= _M4
    x *= _H01
    x >>= np.uint64(56)
    return x


def wire_activity(batch: BitBatch) -> np.ndarray:
    """Fraction of samples with each wire set, counted on the packed words."""
    if batch.n_samples == 0:
        return np.zeros(batch.width)
    return popcount64(batch.words).sum(axis=1) / batch.n_samples


def extract_circuit(network: NetworkParams) -> CompiledCircuit:
    """Argmax gate of every node, with its wiring and the class groups."""
    return CompiledCircuit(
        input_width=network.arch.input_width,
        gates=[np.atleast_1d(argmax_select(layer.logits)).astype(np.int64) for layer in network.layers],
        src_a=[layer.src_a.copy() for layer in network.layers],
        src_b=[layer.src_b.copy() for layer in network.layers],
        classes=network.groupsum.C,
        group_size=network.groupsum.k,
    )


def _eval_layers(circuit: CompiledCircuit, batch: BitBatch) -> List[np.ndarray]:
    if batch.width != circuit.input_width:
        raise ShapeError(f"batch has {batch.width} features, circuit expects {circuit.input_width}")
    wires = batch.words
    lanes = lane_mask(batch.n_samples, wires.shape[1])
    layers = []
    for gates, src_a, src_b in zip(circuit.gates, circuit.src_a, circuit.src_b):
        a = wires[src_a]
        b = wires[src_b]
        out = np.empty_like(a)
        for gate in np.unique(gates):
            mask = gates == gate
            out[mask] = WORD_OPS[GateId(int(gate))](a[mask], b[mask])
        # negating gates set padding lanes; clear them again
        out &= lanes
        layers.append(out)
        wires = out
    return layers


def _scores(circuit: CompiledCircuit, last: np.ndarray, n_samples: int) -> np.ndarray:
    bits = unpack_bits(BitBatch(words=last, n_samples=n_samples))
    return bits.reshape(n_samples, circuit.classes, circuit.group_size).sum(axis=-1, dtype=np.int64)


def eval_bitpacked(circuit: CompiledCircuit, batch: BitBatch) -> np.ndarray:
    """Integer class scores (samples, classes); padding lanes are dropped."""
    layers = _eval_layers(circuit, batch)
    return _scores(circuit, layers[-1], batch.n_samples)


def predict_bitpacked(circuit: CompiledCircuit, bits: np.ndarray) -> np.ndarray:
    """Class predictions; ties go to the lowest class index."""
    return predict(eval_bitpacked(circuit, pack_bits(bits)))


def verify_equivalence(
    circuit: CompiledCircuit,
    network: NetworkParams,
    samples: int = 10000,
    seed: int = 0,
    exhaustive: Optional[bool] = None,
) -> EquivalenceReport:
    """
    Compare every wire of the packed circuit against the float hard pipeline.
    Input widths up to 16 are checked exhaustively unless exhaustive=False.
    """
    if circuit.input_width != network.arch.input_width:
        raise ShapeError(f"circuit input width {circuit.input_width} != network input width {network.arch.input_width}")
    if exhaustive is None:
        exhaustive = circuit.input_width <= EXHAUSTIVE_MAX_WIDTH
    if exhaustive:
        bits = enumerate_inputs(circuit.input_width)
    else:
        if samples == 0:
            return EquivalenceReport(passed=True, samples=0, exhaustive=False, note="0 samples")
        rng = np.random.default_rng(seed)
        bits = rng.integers(0, 2, (samples, circuit.input_width)).astype(np.uint8)

    n = bits.shape[0]
    packed_layers = _eval_layers(circuit, pack_bits(bits))
    float_layers, float_scores = hard_wire_values(network, bits)

    bad_samples = np.zeros(n, dtype=bool)
    first = None
    offsets = circuit.layer_offsets()
    for index, (words, expected) in enumerate(zip(packed_layers, float_layers)):
        got = unpack_bits(BitBatch(words=words, n_samples=n))
        if got.shape != expected.shape:
            raise ShapeError(f"layer {index}: circuit width {got.shape[1]} != network width {expected.shape[1]}")
        diff = got != expected
        bad_samples |= diff.any(axis=1)
        if first is None and diff.any():
            sample = int(np.argmax(diff.any(axis=1)))
            wire = int(np.argmax(diff[sample]))
            first = {"sample": sample, "layer": index, "wire": wire, "global_wire": offsets[index] + wire}

    scores = _scores(circuit, packed_layers[-1], n)
    bad_samples |= predict(scores) != predict(float_scores)
    mismatched = int(bad_samples.sum())
    report = EquivalenceReport(passed=mismatched == 0, samples=n, exhaustive=exhaustive,
                               mismatched_samples=mismatched, first_mismatch=first)
    if n == 0:
        report.note = "0 samples"
    logger.info("Circuit equivalence: %s", report.summary())
    return report


def save_circuit(circuit: CompiledCircuit, path: Union[str, Path]) -> Path:
    """
    Text format: a versioned header, then one line per node "GATE src_a src_b" in
    layer order, sources as global wire ids (inputs first, then layer by layer).
    """
    circuit.validate()
    path = Path(path)
    offsets = circuit.layer_offsets()
    lines = [
        f"{CIRCUIT_HEADER} {CIRCUIT_VERSION}",
        f"input_width {circuit.input_width}",
        f"classes {circuit.classes}",
        f"group_size {circuit.group_size}",
        f"layers {len(circuit.gates)}",
        "layer_widths " + " ".join(str(w) for w in circuit.layer_widths),
    ]
    prev_offset = 0
    for index, (gates, src_a, src_b) in enumerate(zip(circuit.gates, circuit.src_a, circuit.src_b)):
        for gate, a, b in zip(gates, src_a, src_b):
            lines.append(f"{GateId(int(gate)).name} {prev_offset + int(a)} {prev_offset + int(b)}")
        prev_offset = offsets[index]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _header_field(lines: List[str], index: int, key: str) -> List[int]:
    if index >= len(lines):
        raise CircuitError(f"line {index + 1}: missing '{key}' header")
    parts = lines[index].split()
    if not parts or parts[0] != key:
        raise CircuitError(f"line {index + 1}: expected '{key}', got '{lines[index]}'")
    try:
        return [int(p) for p in parts[1:]]
    except ValueError:
        raise CircuitError(f"line {index + 1}: '{key}' values must be integers")


def load_circuit(path: Union[str, Path]) -> CompiledCircuit:
    path = Path(path)
    if not path.exists():
        raise CircuitError(f"circuit file not found: {path}")
    lines = [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines or lines[0].split()[0] != CIRCUIT_HEADER:
        raise CircuitError(f"{path} is not a circuit file (missing '{CIRCUIT_HEADER}' header)")
    version = _header_field(lines, 0, CIRCUIT_HEADER)
    if version != [CIRCUIT_VERSION]:
        raise CircuitError(f"unsupported circuit version {version}")
    input_width = _header_field(lines, 1, "input_width")[0]
    classes = _header_field(lines, 2, "classes")[0]
    group_size = _header_field(lines, 3, "group_size")[0]
    n_layers = _header_field(lines, 4, "layers")[0]
    widths = _header_field(lines, 5, "layer_widths")
    if len(widths) != n_layers:
        raise CircuitError(f"'layers {n_layers}' but {len(widths)} layer widths")
    body = lines[6:]
    if len(body) != sum(widths):
        raise CircuitError(f"expected {sum(widths)} node lines, found {len(body)}")

    gates, src_a, src_b = [], [], []
    cursor = 0
    prev_offset, prev_width = 0, input_width
    for width in widths:
        g = np.empty(width, dtype=np.int64)
        a = np.empty(width, dtype=np.int64)
        b = np.empty(width, dtype=np.int64)
        for j in range(width):
            line_no = 7 + cursor
            parts = body[cursor].split()
            cursor += 1
            if len(parts) != 3:
                raise CircuitError(f"line {line_no}: expected 'GATE src_a src_b', got '{' '.join(parts)}'")
            try:
                g[j] = GateId[parts[0]]
                a[j] = int(parts[1]) - prev_offset
                b[j] = int(parts[2]) - prev_offset
            except (KeyError, ValueError):
                raise CircuitError(f"line {line_no}: cannot parse '{' '.join(parts)}'")
            if not (0 <= a[j] < prev_width and 0 <= b[j] < prev_width):
                raise CircuitError(f"line {line_no}: sources must reference the previous layer")
        gates.append(g)
        src_a.append(a)
        src_b.append(b)
        prev_offset += prev_width
        prev_width = width

    circuit = CompiledCircuit(input_width=input_width, gates=gates, src_a=src_a, src_b=src_b,
                              classes=classes, group_size=group_size)
    circuit.validate()
    return circuit


def benchmark_bitpacked(
    circuit: CompiledCircuit,
    network: NetworkParams,
    samples: int = 10000,
    seed: int = 0,
    repeats: int = 3,
) -> Dict[str, Any]:
    """Wall-clock throughput of the packed circuit against the float hard pipeline (reported only)."""
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, (samples, circuit.input_width)).astype(np.uint8)

    def best_of(fn) -> float:
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            fn()
            times.append(time.perf_counter() - start)
        return min(times)

    batch = pack_bits(bits)
    packed_time = best_of(lambda: eval_bitpacked(circuit, batch))
    float_time = best_of(lambda: forward_eval_mode(network, bits, EvalMode.HARD_ARGMAX))
    last = _eval_layers(circuit, batch)[-1]
    return {
        "samples": samples,
        "gates": circuit.gate_count,
        "packing_factor": WORD_BITS,
        "packed_samples_per_s": samples / packed_time if packed_time > 0 else float("inf"),
        "float_samples_per_s": samples / float_time if float_time > 0 else float("inf"),
        "speedup": float_time / packed_time if packed_time > 0 else float("inf"),
        "output_activity": float(np.mean(wire_activity(BitBatch(words=last, n_samples=samples)))),
    }
