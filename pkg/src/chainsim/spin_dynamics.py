"""Disordered Heisenberg chains restricted to the zero/one-excitation sector.

The chain Hamiltonian ``H = -(J/2) sum_<ij> sigma_i . sigma_j`` conserves the
number of excitations, so an initial state ``a|0...0> + b|1_enc>`` never leaves
the span of the vacuum and the ``N`` single-excitation states ``|j>``.  Within
the single-excitation block the Hamiltonian is a real symmetric tridiagonal
matrix; all the dynamics below work on that ``N x N`` block, measured relative
to the vacuum energy so the vacuum itself does not evolve.

Sites are indexed from 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import eigh_tridiagonal

#: Cauchy draws are clamped to this many multiples of the coupling.
CAUCHY_CLAMP = 1e3


class Distribution(str, Enum):
    UNIFORM = "uniform"
    NORMAL = "normal"
    CAUCHY = "cauchy"


@dataclass(frozen=True)
class ChainSpec:
    n_sites: int
    coupling_j: float = 1 / math.sqrt(2)
    alice_size: int = 1
    bob_size: int = 1

    def __post_init__(self):
        if self.n_sites < 1 or self.alice_size < 1 or self.bob_size < 1:
            raise ValueError("site counts must be positive")
        if self.alice_size + self.bob_size > self.n_sites:
            raise ValueError(
                f"alice_size + bob_size = {self.alice_size + self.bob_size} "
                f"exceeds n_sites = {self.n_sites}"
            )
        if not self.coupling_j > 0:
            raise ValueError("coupling_j must be positive")

    @property
    def bob_sites(self) -> slice:
        return slice(self.n_sites - self.bob_size, self.n_sites)

    @property
    def bob_center(self) -> float:
        return self.n_sites - (self.bob_size + 1) / 2


@dataclass(frozen=True)
class DisorderModel:
    distribution: Distribution = Distribution.UNIFORM
    delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "distribution", Distribution(self.distribution))
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")

    def with_delta(self, delta: float) -> "DisorderModel":
        return DisorderModel(self.distribution, delta, self.seed)


@dataclass(frozen=True)
class DisorderRealization:
    epsilons: np.ndarray
    n_clamped: int = 0


@dataclass(frozen=True)
class SingleExcitationHamiltonian:
    """Tridiagonal block of ``H_eps`` in the basis ``|j>``.

    ``vacuum_energy`` is the identity shift that was removed: the full-space
    single-excitation energies are ``eigvals(block) + vacuum_energy``.
    """

    diagonal: np.ndarray
    off_diagonal: np.ndarray
    vacuum_energy: float = 0.0

    @property
    def n_sites(self) -> int:
        return len(self.diagonal)

    def to_dense(self) -> np.ndarray:
        return (
            np.diag(self.diagonal)
            + np.diag(self.off_diagonal, 1)
            + np.diag(self.off_diagonal, -1)
        )


@dataclass(frozen=True)
class PacketParams:
    """Gaussian encoding in Alice's region; ``None`` picks the defaults."""

    center: float | None = None
    width: float | None = None
    momentum: float = math.pi / 2


@dataclass(frozen=True)
class TransferRecord:
    time: float
    c_b: float
    gamma: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "gamma", 1.0 - self.c_b)


def trial_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a cell/trial; depends only on ``seed`` and ``key``."""
    ss = np.random.SeedSequence(entropy=seed & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(key))
    return np.random.default_rng(ss)


def sample_disorder(
    model: DisorderModel, n: int, trial_index: int = 0, clamp: float | None = None
) -> DisorderRealization:
    """Draw ``n`` i.i.d. on-site energies for one trial.

    The trial's stream is fixed by ``(model.seed, trial_index)`` and the draws
    are standardised variates scaled by ``delta``, so every ``delta`` sees the
    same underlying randomness for a given trial.  ``clamp`` bounds
    ``|eps|`` and only matters for Cauchy disorder.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = trial_rng(model.seed, trial_index)
    if model.distribution is Distribution.UNIFORM:
        unit = rng.uniform(-1.0, 1.0, n)
    elif model.distribution is Distribution.NORMAL:
        unit = rng.standard_normal(n)
    else:
        unit = rng.standard_cauchy(n)
    eps = model.delta * unit
    n_clamped = 0
    if clamp is not None:
        over = np.abs(eps) > clamp
        n_clamped = int(over.sum())
        eps = np.clip(eps, -clamp, clamp)
    return DisorderRealization(eps, n_clamped)


def build_hamiltonian(
    chain: ChainSpec, disorder: DisorderRealization | None = None
) -> SingleExcitationHamiltonian:
    """Single-excitation block of the Heisenberg chain plus diagonal disorder.

    Each bond contributes ``-J`` hopping and, relative to the all-up vacuum, an
    energy ``+J`` to each of its two sites when the excitation sits on it
    (the ``sigma^z sigma^z`` term flips sign).  End sites have one bond.
    """
    n, j = chain.n_sites, chain.coupling_j
    diag = np.full(n, 2.0 * j)
    diag[0] = diag[-1] = j
    if n == 1:
        diag[0] = 0.0
    if disorder is not None:
        eps = np.asarray(disorder.epsilons, dtype=float)
        if eps.shape != (n,):
            raise ValueError(f"disorder has length {eps.size}, chain has {n} sites")
        diag = diag + eps
    return SingleExcitationHamiltonian(
        diagonal=diag,
        off_diagonal=np.full(n - 1, -j),
        vacuum_energy=-0.5 * j * (n - 1),
    )


@dataclass(frozen=True)
class Wavepacket:
    amplitudes: np.ndarray

    def __post_init__(self):
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"wavepacket norm {norm!r} is not 1")

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def centroid(self) -> float:
        prob = self.probabilities
        return float(np.dot(np.arange(prob.size), prob) / prob.sum())


def gaussian_wavepacket(
    chain: ChainSpec,
    center: float,
    width: float,
    momentum: float = math.pi / 2,
    truncate_to_alice: bool = True,
) -> Wavepacket:
    """``c_j ~ exp(-(j-center)^2 / (4 width^2)) exp(i momentum j)``, unit norm.

    ``width == 0`` gives a single-site packet at ``round(center)``.
    """
    if width < 0:
        raise ValueError("width must be nonnegative")
    sites = np.arange(chain.n_sites)
    kept = sites < chain.alice_size if truncate_to_alice else np.ones(chain.n_sites, bool)
    dist2 = (sites - center) ** 2
    denom = 4.0 * width**2
    if denom == 0:
        envelope = (sites == int(round(center))).astype(float)
    else:
        # shift the exponent so the nearest kept site has weight 1 (no underflow)
        envelope = np.exp(-(dist2 - dist2[kept].min()) / denom)
    amps = np.where(kept, envelope, 0.0) * np.exp(1j * momentum * sites)
    norm = np.linalg.norm(amps)
    if norm == 0.0:
        raise ValueError("wavepacket has no support inside Alice's region")
    return Wavepacket(amps / norm)


def encode_packet(chain: ChainSpec, params: PacketParams | None = None) -> Wavepacket:
    """Alice's encoding of ``|1>``: centred in her region, width ``N_A/6`` by default."""
    params = params or PacketParams()
    center = (chain.alice_size - 1) / 2 if params.center is None else params.center
    width = chain.alice_size / 6 if params.width is None else params.width
    return gaussian_wavepacket(chain, center, width, params.momentum)


def group_velocity(coupling_j: float, momentum: float = math.pi / 2) -> float:
    return 2.0 * coupling_j * math.sin(momentum)


def arrival_time(chain: ChainSpec, params: PacketParams | None = None) -> float:
    """Time for the clean packet centroid to reach the middle of Bob's region."""
    params = params or PacketParams()
    center = (chain.alice_size - 1) / 2 if params.center is None else params.center
    return (chain.bob_center - center) / group_velocity(chain.coupling_j, params.momentum)


class Propagator:
    """Cached eigensystem of one Hamiltonian; evolves packets to any time."""

    def __init__(self, h: SingleExcitationHamiltonian):
        self.h = h
        if h.n_sites == 1:
            self.energies = np.asarray(h.diagonal, dtype=float)
            self.vectors = np.ones((1, 1))
        else:
            try:
                self.energies, self.vectors = eigh_tridiagonal(h.diagonal, h.off_diagonal)
            except np.linalg.LinAlgError as exc:
                raise FloatingPointError(f"tridiagonal eigensolver failed: {exc}") from exc

    def evolve_amplitudes(self, amplitudes: np.ndarray, t: float) -> np.ndarray:
        coeffs = self.vectors.T @ amplitudes
        return self.vectors @ (np.exp(-1j * self.energies * t) * coeffs)

    def evolve(self, psi: Wavepacket, t: float) -> Wavepacket:
        if t < 0:
            raise ValueError("t must be nonnegative")
        if psi.amplitudes.size != self.h.n_sites:
            raise ValueError("wavepacket and Hamiltonian sizes differ")
        return Wavepacket(self.evolve_amplitudes(psi.amplitudes, t))


def evolve(h: SingleExcitationHamiltonian, psi: Wavepacket, t: float) -> Wavepacket:
    """``exp(-i H t) psi`` through the eigendecomposition of ``h``."""
    return Propagator(h).evolve(psi, t)


def bob_capture(psi: Wavepacket, chain: ChainSpec) -> float:
    """Probability mass on Bob's last ``N_B`` sites (``C_B``)."""
    c_b = float(np.sum(psi.probabilities[chain.bob_sites]))
    return min(max(c_b, 0.0), 1.0)


def clamp_for(chain: ChainSpec, model: DisorderModel) -> float | None:
    if model.distribution is Distribution.CAUCHY:
        return CAUCHY_CLAMP * chain.coupling_j
    return None


def transfer_gamma(
    chain: ChainSpec,
    model: DisorderModel,
    trial_index: int = 0,
    packet_params: PacketParams | None = None,
    t: float = 0.0,
) -> TransferRecord:
    """Damping parameter ``gamma = 1 - C_B`` for one disorder realisation at time ``t``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    disorder = sample_disorder(model, chain.n_sites, trial_index, clamp_for(chain, model))
    h = build_hamiltonian(chain, disorder)
    psi = evolve(h, encode_packet(chain, packet_params), t)
    return TransferRecord(time=t, c_b=bob_capture(psi, chain))


def capture_series(
    chain: ChainSpec,
    model: DisorderModel,
    trial_index: int,
    times,
    packet_params: PacketParams | None = None,
) -> np.ndarray:
    """``C_B`` at several times for one realisation, sharing one eigendecomposition."""
    disorder = sample_disorder(model, chain.n_sites, trial_index, clamp_for(chain, model))
    prop = Propagator(build_hamiltonian(chain, disorder))
    amps0 = encode_packet(chain, packet_params).amplitudes
    out = np.empty(len(times))
    for i, t in enumerate(times):
        amps = prop.evolve_amplitudes(amps0, t)
        out[i] = np.sum(np.abs(amps[chain.bob_sites]) ** 2)
    return np.clip(out, 0.0, 1.0)
