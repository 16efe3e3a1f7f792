"""
The 16 two-input Boolean gates in soft (bilinear, real-valued) and hard (bit) form.

Truth tables are indexed by 2*a + b, i.e. the inputs (0,0), (0,1), (1,0), (1,1).
Every soft gate is c0 + c1*a + c2*b + c3*a*b, so the whole family is one (16, 4)
coefficient table and any mixture of gates is again bilinear.
"""

from dataclasses import dataclass
from enum import IntEnum
from fractions import Fraction
from typing import Callable, Dict, List, Tuple, Union

import numpy as np

NUM_GATES = 16
THRESHOLD = 0.5
# Soft outputs may leave [0, 1] by a few ulps through rounding.
RANGE_TOLERANCE = 1e-12


class GateId(IntEnum):
    FALSE = 0
    AND = 1
    A_AND_NOT_B = 2
    A = 3
    NOT_A_AND_B = 4
    B = 5
    XOR = 6
    OR = 7
    NOR = 8
    XNOR = 9
    NOT_B = 10
    A_OR_NOT_B = 11
    NOT_A = 12
    NOT_A_OR_B = 13
    NAND = 14
    TRUE = 15


@dataclass(frozen=True)
class GateSpec:
    id: GateId
    coeffs: Tuple[int, int, int, int]
    truth_table: Tuple[int, int, int, int]

    @property
    def name(self) -> str:
        return self.id.name


# Soft formulas: product t-norm, probabilistic t-conorm, negation 1 - x.
_SOFT_COEFFS: Dict[GateId, Tuple[int, int, int, int]] = {
    GateId.FALSE: (0, 0, 0, 0),
    GateId.AND: (0, 0, 0, 1),          # ab
    GateId.A_AND_NOT_B: (0, 1, 0, -1),  # a(1-b)
    GateId.A: (0, 1, 0, 0),
    GateId.NOT_A_AND_B: (0, 0, 1, -1),  # (1-a)b
    GateId.B: (0, 0, 1, 0),
    GateId.XOR: (0, 1, 1, -2),         # a+b-2ab
    GateId.OR: (0, 1, 1, -1),          # a+b-ab
    GateId.NOR: (1, -1, -1, 1),
    GateId.XNOR: (1, -1, -1, 2),
    GateId.NOT_B: (1, 0, -1, 0),
    GateId.A_OR_NOT_B: (1, 0, -1, 1),   # 1-b+ab
    GateId.NOT_A: (1, -1, 0, 0),
    GateId.NOT_A_OR_B: (1, -1, 0, 1),   # 1-a+ab
    GateId.NAND: (1, 0, 0, -1),
    GateId.TRUE: (1, 0, 0, 0),
}

# Hard formulas, written as Boolean expressions rather than derived from the coefficients.
_HARD_FORMULAS: Dict[GateId, Callable[[bool, bool], bool]] = {
    GateId.FALSE: lambda a, b: False,
    GateId.AND: lambda a, b: a and b,
    GateId.A_AND_NOT_B: lambda a, b: a and not b,
    GateId.A: lambda a, b: a,
    GateId.NOT_A_AND_B: lambda a, b: (not a) and b,
    GateId.B: lambda a, b: b,
    GateId.XOR: lambda a, b: a != b,
    GateId.OR: lambda a, b: a or b,
    GateId.NOR: lambda a, b: not (a or b),
    GateId.XNOR: lambda a, b: a == b,
    GateId.NOT_B: lambda a, b: not b,
    GateId.A_OR_NOT_B: lambda a, b: a or not b,
    GateId.NOT_A: lambda a, b: not a,
    GateId.NOT_A_OR_B: lambda a, b: (not a) or b,
    GateId.NAND: lambda a, b: not (a and b),
    GateId.TRUE: lambda a, b: True,
}

_CORNERS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _truth_table(gate_id: GateId) -> Tuple[int, int, int, int]:
    formula = _HARD_FORMULAS[gate_id]
    return tuple(int(bool(formula(bool(a), bool(b)))) for a, b in _CORNERS)


GATES: Tuple[GateSpec, ...] = tuple(
    GateSpec(id=gid, coeffs=_SOFT_COEFFS[gid], truth_table=_truth_table(gid)) for gid in GateId
)

# (16, 4) float64 coefficient table and (16, 4) uint8 truth table, indexed by gate id.
GATE_COEFFS = np.array([g.coeffs for g in GATES], dtype=np.float64)
GATE_COEFFS.setflags(write=False)
TRUTH_TABLES = np.array([g.truth_table for g in GATES], dtype=np.uint8)
TRUTH_TABLES.setflags(write=False)

GateLike = Union[GateSpec, GateId, int, str]


def get_gate(gate: GateLike) -> GateSpec:
    if isinstance(gate, GateSpec):
        return gate
    if isinstance(gate, str):
        try:
            return GATES[GateId[gate.upper()]]
        except KeyError:
            raise ValueError(f"Unknown gate name: {gate}")
    index = int(gate)
    if not 0 <= index < NUM_GATES:
        raise ValueError(f"Gate index must be in [0, 15], got {index}")
    return GATES[index]


def _check_unit_interval(name: str, x: np.ndarray):
    if np.any(~np.isfinite(x)) or np.any(x < -RANGE_TOLERANCE) or np.any(x > 1.0 + RANGE_TOLERANCE):
        raise ValueError(
            f"Soft gate input '{name}' outside [0, 1] (min={np.min(x)}, max={np.max(x)}); "
            "an upstream activation produced an invalid value"
        )


def soft_gate_eval(gate: GateLike, a, b):
    """c0 + c1*a + c2*b + c3*a*b; accepts scalars or arrays in [0, 1]."""
    spec = get_gate(gate)
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    _check_unit_interval("a", a_arr)
    _check_unit_interval("b", b_arr)
    c0, c1, c2, c3 = spec.coeffs
    out = c0 + c1 * a_arr + c2 * b_arr + c3 * a_arr * b_arr
    return float(out) if out.ndim == 0 else out


def soft_gate_partials(gate: GateLike, a, b) -> Tuple[np.ndarray, np.ndarray]:
    """(dg/da, dg/db) = (c1 + c3*b, c2 + c3*a)."""
    _, c1, c2, c3 = get_gate(gate).coeffs
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    return c1 + c3 * b_arr, c2 + c3 * a_arr


def _as_bits(name: str, x) -> np.ndarray:
    arr = np.asarray(x)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"Hard gate input '{name}' must contain only bits 0/1")
    return arr.astype(np.uint8)


def hard_gate_eval(gate: GateLike, a, b):
    """Truth-table lookup at (a, b)."""
    spec = get_gate(gate)
    a_bits = _as_bits("a", a)
    b_bits = _as_bits("b", b)
    out = TRUTH_TABLES[spec.id][2 * a_bits + b_bits]
    return int(out) if np.ndim(out) == 0 else out


def threshold(x):
    """1 iff x > 0.5; exactly 0.5 maps to 0."""
    arr = np.asarray(x)
    bits = (arr > THRESHOLD).astype(np.uint8)
    return int(bits) if bits.ndim == 0 else bits


def negation_of(gate: GateLike) -> GateSpec:
    """The gate whose truth table is the bitwise complement of this one."""
    table = tuple(1 - bit for bit in get_gate(gate).truth_table)
    for spec in GATES:
        if spec.truth_table == table:
            return spec
    raise AssertionError("gate family is closed under negation")


def _quadrant_gap(spec: GateSpec) -> Fraction:
    # On each quadrant the hard output is a constant h and the soft output lies in [0, 1],
    # so |soft - h| is soft (h = 0) or 1 - soft (h = 1): bilinear, and its mean over the
    # quadrant is its value at the quadrant centre.
    c0, c1, c2, c3 = (Fraction(c) for c in spec.coeffs)
    total = Fraction(0)
    for a_bit in (0, 1):
        for b_bit in (0, 1):
            ma = Fraction(1, 4) + Fraction(a_bit, 2)
            mb = Fraction(1, 4) + Fraction(b_bit, 2)
            soft_mean = c0 + c1 * ma + c2 * mb + c3 * ma * mb
            hard = spec.truth_table[2 * a_bit + b_bit]
            total += Fraction(1, 4) * (1 - soft_mean if hard else soft_mean)
    return total


def computation_gap_uniform(gate: GateLike) -> float:
    """E|g_soft(a,b) - g_hard(threshold(a), threshold(b))| for (a,b) ~ U[0,1]^2, exactly."""
    return float(_quadrant_gap(get_gate(gate)))


def computation_gap_table() -> Dict[float, List[str]]:
    """Gates grouped by their analytic uniform computation gap."""
    table: Dict[float, List[str]] = {}
    for spec in GATES:
        table.setdefault(computation_gap_uniform(spec), []).append(spec.name)
    return dict(sorted(table.items()))


Sampler = Union[str, np.ndarray, Callable[[np.random.Generator, int], Tuple[np.ndarray, np.ndarray]]]


def _draw_inputs(sampler: Sampler, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    if callable(sampler):
        a, b = sampler(rng, n)
        return np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if isinstance(sampler, str):
        if sampler == "uniform":
            return rng.random(n), rng.random(n)
        if sampler == "binary":
            return rng.integers(0, 2, n).astype(np.float64), rng.integers(0, 2, n).astype(np.float64)
        if sampler == "boundary":
            return np.full(n, THRESHOLD), rng.random(n)
        raise ValueError(f"Unknown sampler '{sampler}' (expected uniform, binary, boundary)")
    values = np.asarray(sampler, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("Empirical sampler needs at least one value")
    return values[rng.integers(0, values.size, n)], values[rng.integers(0, values.size, n)]


def computation_gap_samples(gate: GateLike, sampler: Sampler, n: int, seed: int = 0) -> np.ndarray:
    """Per-draw |soft - hard| values; their mean is the Monte Carlo computation gap."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    spec = get_gate(gate)
    rng = np.random.default_rng(seed)
    a, b = _draw_inputs(sampler, n, rng)
    soft = soft_gate_eval(spec, a, b)
    hard = TRUTH_TABLES[spec.id][2 * threshold(a) + threshold(b)]
    return np.abs(np.asarray(soft) - hard)


def computation_gap_empirical(gate: GateLike, sampler: Sampler, n: int, seed: int = 0) -> float:
    return float(np.mean(computation_gap_samples(gate, sampler, n, seed)))
