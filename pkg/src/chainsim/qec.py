"""The [[5,1,3]] code in the binary symplectic picture and its concatenation.

Paulis are stored as ``(x_bits, z_bits)`` with phases dropped.  Decoding is a
16-entry syndrome lookup; since the code is perfect the table covers the
identity and all fifteen weight-one errors exactly once.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import lru_cache

import numpy as np

N_QUBITS = 5

#: Exact coefficients of p^2 .. p^5 in the one-level logical parameter.
ONE_LEVEL_COEFFS = (Fraction(15, 2), Fraction(-25, 2), Fraction(15, 2), Fraction(-3, 2))
THRESHOLD = 2 / 15


@dataclass(frozen=True)
class PauliOperator:
    x_bits: tuple[int, ...]
    z_bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.x_bits) != len(self.z_bits):
            raise ValueError("x and z parts differ in length")

    @classmethod
    def from_string(cls, s: str) -> "PauliOperator":
        table = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
        bits = [table[c] for c in s.upper()]
        return cls(tuple(b[0] for b in bits), tuple(b[1] for b in bits))

    @classmethod
    def identity(cls, n: int = N_QUBITS) -> "PauliOperator":
        return cls((0,) * n, (0,) * n)

    @classmethod
    def single(cls, kind: str, qubit: int, n: int = N_QUBITS) -> "PauliOperator":
        s = ["I"] * n
        s[qubit] = kind
        return cls.from_string("".join(s))

    def __len__(self):
        return len(self.x_bits)

    def __mul__(self, other: "PauliOperator") -> "PauliOperator":
        if len(self) != len(other):
            raise ValueError("length mismatch")
        return PauliOperator(
            tuple(a ^ b for a, b in zip(self.x_bits, other.x_bits)),
            tuple(a ^ b for a, b in zip(self.z_bits, other.z_bits)),
        )

    def weight(self) -> int:
        return sum(1 for x, z in zip(self.x_bits, self.z_bits) if x or z)

    def anticommutes(self, other: "PauliOperator") -> bool:
        if len(self) != len(other):
            raise ValueError("length mismatch")
        s = sum(a * d + b * c for a, b, c, d in
                zip(self.x_bits, self.z_bits, other.x_bits, other.z_bits))
        return bool(s % 2)

    def __str__(self):
        names = {(0, 0): "I", (1, 0): "X", (1, 1): "Y", (0, 1): "Z"}
        return "".join(names[b] for b in zip(self.x_bits, self.z_bits))


@dataclass(frozen=True)
class StabilizerCode:
    generators: tuple[PauliOperator, ...]
    logical_x: PauliOperator
    logical_z: PauliOperator


class Logical(str, Enum):
    I = "I"
    X = "X"
    Y = "Y"
    Z = "Z"
    NONZERO_SYNDROME = "NONZERO_SYNDROME"


def five_qubit_code() -> StabilizerCode:
    gens = ("XZZXI", "IXZZX", "XIXZZ", "ZXIXZ")
    return StabilizerCode(
        generators=tuple(PauliOperator.from_string(g) for g in gens),
        logical_x=PauliOperator.from_string("XXXXX"),
        logical_z=PauliOperator.from_string("ZZZZZ"),
    )


def syndrome(code: StabilizerCode, e: PauliOperator) -> tuple[int, ...]:
    """Bit ``i`` is 1 when ``e`` anticommutes with generator ``i``."""
    n = len(code.logical_x)
    if len(e) != n:
        raise ValueError(f"expected a {n}-qubit Pauli, got {len(e)}")
    return tuple(int(e.anticommutes(g)) for g in code.generators)


def syndrome_table(code: StabilizerCode) -> dict[tuple[int, ...], PauliOperator]:
    """Minimum-weight correction for each syndrome."""
    n = len(code.logical_x)
    table = {syndrome(code, PauliOperator.identity(n)): PauliOperator.identity(n)}
    for q in range(n):
        for kind in "XYZ":
            e = PauliOperator.single(kind, q, n)
            s = syndrome(code, e)
            if s in table:
                raise ValueError(f"syndrome {s} is degenerate for weight-1 errors")
            table[s] = e
    return table


def logical_action(code: StabilizerCode, r: PauliOperator) -> Logical:
    if any(syndrome(code, r)):
        return Logical.NONZERO_SYNDROME
    flips_z = r.anticommutes(code.logical_z)  # carries an X-bar component
    flips_x = r.anticommutes(code.logical_x)  # carries a Z-bar component
    return {
        (False, False): Logical.I,
        (True, False): Logical.X,
        (False, True): Logical.Z,
        (True, True): Logical.Y,
    }[(flips_z, flips_x)]


def correct(code: StabilizerCode, e: PauliOperator, table=None) -> Logical:
    """Residual logical Pauli after syndrome lookup and correction of ``e``."""
    table = table or syndrome_table(code)
    return logical_action(code, e * table[syndrome(code, e)])


_LOGICAL_BITS = {Logical.I: (0, 0), Logical.X: (1, 0), Logical.Y: (1, 1), Logical.Z: (0, 1)}


@lru_cache(maxsize=None)
def decoding_table() -> np.ndarray:
    """Logical residual for every 5-qubit Pauli, as a ``(1024, 2)`` array of (x, z) bits.

    Row index is ``x_mask * 32 + z_mask`` with qubit ``q`` at bit ``q`` of each mask.
    """
    code = five_qubit_code()
    table = syndrome_table(code)
    out = np.zeros((1024, 2), dtype=np.uint8)
    for xm in range(32):
        for zm in range(32):
            e = PauliOperator(
                tuple((xm >> q) & 1 for q in range(N_QUBITS)),
                tuple((zm >> q) & 1 for q in range(N_QUBITS)),
            )
            out[xm * 32 + zm] = _LOGICAL_BITS[correct(code, e, table)]
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _logical_weight_counts() -> dict[Logical, tuple[int, ...]]:
    """Number of Pauli patterns of each weight that leave each logical residual."""
    code = five_qubit_code()
    table = syndrome_table(code)
    counts = {lg: [0] * (N_QUBITS + 1) for lg in (Logical.I, Logical.X, Logical.Y, Logical.Z)}
    for pattern in itertools.product("IXYZ", repeat=N_QUBITS):
        e = PauliOperator.from_string("".join(pattern))
        counts[correct(code, e, table)][e.weight()] += 1
    return {lg: tuple(c) for lg, c in counts.items()}


def _poly_mul(a: list[Fraction], b: list[Fraction]) -> list[Fraction]:
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += x * y
    return out


@lru_cache(maxsize=None)
def enumeration_polynomial() -> tuple[Fraction, ...]:
    """Exact coefficients (ascending powers of p) of ``p'`` from the full enumeration.

    Each qubit independently suffers X, Y or Z with probability ``p/4`` each.
    A pattern of weight ``w`` has probability ``(p/4)^w (1 - 3p/4)^(5-w)``.
    """
    counts = _logical_weight_counts()
    fail = [Fraction(0)]
    for lg in (Logical.X, Logical.Y, Logical.Z):
        for w, c in enumerate(counts[lg]):
            if not c:
                continue
            term = [Fraction(c)]
            for _ in range(w):
                term = _poly_mul(term, [Fraction(0), Fraction(1, 4)])
            for _ in range(N_QUBITS - w):
                term = _poly_mul(term, [Fraction(1), Fraction(-3, 4)])
            fail = fail + [Fraction(0)] * (len(term) - len(fail))
            fail = [f + t for f, t in zip(fail, term)]
    coeffs = [Fraction(4, 3) * c for c in fail]
    while len(coeffs) > 1 and coeffs[-1] == 0:
        coeffs.pop()
    return tuple(coeffs)


def logical_pauli_probs(p: float) -> np.ndarray:
    """``(q_I, q_X, q_Y, q_Z)`` after one round of encode, depolarize, correct, decode."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    counts = _logical_weight_counts()
    single = p / 4
    ident = 1 - 3 * p / 4
    out = np.zeros(4)
    for i, lg in enumerate((Logical.I, Logical.X, Logical.Y, Logical.Z)):
        out[i] = sum(c * single**w * ident ** (N_QUBITS - w) for w, c in enumerate(counts[lg]))
    return out


def effective_depolarizing_after_ec(p: float) -> float:
    q = logical_pauli_probs(p)
    if np.ptp(q[1:]) > 1e-12:
        raise ArithmeticError(f"logical channel is not depolarizing: {q!r}")
    return 4 * (1 - q[0]) / 3


def one_level_parameter(p: float) -> float:
    return 7.5 * p**2 - 12.5 * p**3 + 7.5 * p**4 - 1.5 * p**5


def concatenated_parameter(p: float, k: int) -> float:
    if k < 0:
        raise ValueError("k must be >= 0")
    for _ in range(k):
        p = one_level_parameter(p)
    return p


def level_bound(p: float, k: int) -> float:
    """Upper bound ``(2/15) (15p/2)^(2^k)`` on the level-``k`` parameter."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return THRESHOLD * (7.5 * p) ** (2**k)


# public aliases
lemma2_polynomial = one_level_parameter
lemma2_bound = level_bound
