"""Single-qubit channels: amplitude damping, depolarizing, fidelity, twirling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

CPTP_TOL = 1e-10


def _check_unit(name: str, value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


@dataclass(frozen=True)
class QubitChannel:
    """A qubit CPTP map held either as Kraus operators or as Pauli probabilities.

    Exactly one of ``kraus_ops`` / ``pauli_probs`` is set.  ``pauli_probs`` is
    ordered (I, X, Y, Z).
    """

    kraus_ops: tuple[np.ndarray, ...] | None = None
    pauli_probs: np.ndarray | None = None

    def __post_init__(self):
        if (self.kraus_ops is None) == (self.pauli_probs is None):
            raise ValueError("give exactly one of kraus_ops or pauli_probs")
        if self.kraus_ops is not None:
            ops = tuple(np.asarray(k, dtype=complex) for k in self.kraus_ops)
            if not ops or any(k.shape != (2, 2) for k in ops):
                raise ValueError("Kraus operators must be 2x2")
            completeness = sum(k.conj().T @ k for k in ops)
            if not np.allclose(completeness, np.eye(2), atol=CPTP_TOL, rtol=0):
                raise ValueError("Kraus operators are not trace preserving")
            object.__setattr__(self, "kraus_ops", ops)
        else:
            probs = np.asarray(self.pauli_probs, dtype=float)
            if probs.shape != (4,) or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
                raise ValueError(f"invalid Pauli probabilities {probs!r}")
            object.__setattr__(self, "pauli_probs", probs)

    @classmethod
    def from_kraus(cls, ops: Sequence[np.ndarray]) -> "QubitChannel":
        return cls(kraus_ops=tuple(ops))

    @classmethod
    def from_pauli(cls, probs: Sequence[float]) -> "QubitChannel":
        return cls(pauli_probs=np.asarray(probs, dtype=float))

    def kraus(self) -> tuple[np.ndarray, ...]:
        if self.kraus_ops is not None:
            return self.kraus_ops
        return tuple(math.sqrt(q) * P for q, P in zip(self.pauli_probs, PAULIS))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return sum(k @ rho @ k.conj().T for k in self.kraus())


I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (I2, X, Y, Z)


def amplitude_damping(gamma: float) -> QubitChannel:
    gamma = _check_unit("gamma", gamma)
    k0 = np.array([[1, 0], [0, math.sqrt(1 - gamma)]], dtype=complex)
    k1 = np.array([[0, math.sqrt(gamma)], [0, 0]], dtype=complex)
    return QubitChannel.from_kraus([k0, k1])


def depolarizing(p: float) -> QubitChannel:
    p = _check_unit("p", p)
    return QubitChannel.from_pauli([1 - 3 * p / 4, p / 4, p / 4, p / 4])


def entanglement_fidelity(ch: QubitChannel) -> float:
    if ch.pauli_probs is not None:
        return float(ch.pauli_probs[0])
    return float(sum(abs(np.trace(k)) ** 2 for k in ch.kraus_ops) / 4)


def average_fidelity(ch: QubitChannel) -> float:
    """Haar-averaged output fidelity, ``(2 F_e + 1) / 3`` for a qubit."""
    return (2 * entanglement_fidelity(ch) + 1) / 3


def twirl_to_depolarizing(ch: QubitChannel) -> float:
    """Depolarizing parameter with the same average (and entanglement) fidelity.

    Channels with ``F_e < 1/4`` (a bit flip, say) twirl to ``p`` in ``(1, 4/3]``:
    still a valid Pauli channel ``(1 - 3p/4, p/4, p/4, p/4)``, just not a
    mixture with the maximally mixed state.
    """
    p = 2 * (1 - average_fidelity(ch))
    if not -1e-12 <= p <= 4 / 3 + 1e-12:
        raise ValueError(f"twirled parameter {p!r} outside [0, 4/3]; channel is not CPTP")
    return min(max(p, 0.0), 4 / 3)


def twirl_amplitude_damping(gamma: float) -> float:
    gamma = _check_unit("gamma", gamma)
    return (gamma + 2 * (1 - math.sqrt(1 - gamma))) / 3


def compose_depolarizing(p: float, m: int) -> float:
    """Parameter of ``m`` identical depolarizing channels applied in sequence."""
    p = _check_unit("p", p)
    if m < 1:
        raise ValueError("m must be >= 1")
    return 1 - (1 - p) ** m


def compose_pauli(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pauli probabilities of the channel ``b`` after ``a`` (Paulis multiply as Z2 x Z2)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    out = np.zeros(4)
    for i in range(4):
        for j in range(4):
            out[i ^ j] += a[i] * b[j]
    return out


def pauli_probs_to_depolarizing(probs: np.ndarray) -> float:
    """``p`` for a depolarizing Pauli vector, read off the identity weight."""
    return 4 * (1 - float(probs[0])) / 3
