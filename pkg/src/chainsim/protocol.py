"""Multi-rail transmission: depth planning, composed bounds and Pauli-frame simulation.

A *k-block* is ``5**k`` parallel chain segments of length ``L`` carrying one
qubit encoded in the 5-qubit code concatenated ``k`` times; ``m`` blocks in
series cover the full distance.  Every segment boundary is an ideal
error-correction step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field

import numpy as np

from . import qec
from .channels import twirl_amplitude_damping
from .montecarlo import EmpiricalFit, predicted_gamma
from .spin_dynamics import (
    ChainSpec,
    DisorderModel,
    Distribution,
    PacketParams,
    Propagator,
    build_hamiltonian,
    clamp_for,
    encode_packet,
    group_velocity,
    sample_disorder,
    trial_rng,
)

MAX_LEVEL = 8
DEFAULT_MARGIN = 0.75


class InfeasiblePlan(ValueError):
    """No segment length / depth satisfies the threshold condition."""


@dataclass(frozen=True)
class Plan:
    segment_length_l: float
    segment_time: float
    segments_m: int
    level_k: int
    depth_n: int
    p_basic: float
    p_total_bound: float
    fidelity_bound: float

    def __post_init__(self):
        if self.depth_n != 5**self.level_k:
            raise ValueError("depth_n must equal 5**level_k")
        if self.level_k >= 1 and not self.p_basic < qec.THRESHOLD:
            raise ValueError("p_basic must be below 2/15 when encoding is used")

    def to_json_dict(self, **metadata) -> dict:
        d = asdict(self)
        d["metadata"] = metadata
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "Plan":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def p_total_bound(p: float, k: int, m: int) -> float:
    """Upper bound on the parameter of ``m`` composed ``k``-blocks.

    Returns 1 (vacuous) when the per-block bound is not below 1.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    block = qec.level_bound(p, k)
    if block >= 1:
        return 1.0
    # 1 - (1 - x)^m without cancellation for tiny x
    return float(min(max(-math.expm1(m * math.log1p(-block)), 0.0), 1.0))


def depth_rhs(m: int, epsilon: float, p: float) -> float:
    return (math.log(m / epsilon) / -math.log(7.5 * p)) ** 3


def required_depth(m: int, epsilon: float, p: float) -> tuple[int, int]:
    """Smallest ``k`` with ``5**k > (ln(m/eps))^3 (-ln(15p/2))^-3``; returns ``(k, 5**k)``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    if not 0 < p < qec.THRESHOLD:
        raise InfeasiblePlan(f"p = {p!r} is not below the threshold 2/15; no depth suffices")
    rhs = depth_rhs(m, epsilon, p)
    k = 0
    while 5**k <= rhs:
        k += 1
    return k, 5**k


def make_plan(p: float, m: int, epsilon: float, segment_length: float = 1.0,
              velocity: float = math.sqrt(2)) -> Plan:
    """Plan for a known per-segment parameter ``p``."""
    if p == 0:
        k, n = 0, 1
    else:
        k, n = required_depth(m, epsilon, p)
    bound = p_total_bound(p, k, m)
    return Plan(
        segment_length_l=float(segment_length),
        segment_time=float(segment_length / velocity),
        segments_m=int(m),
        level_k=k,
        depth_n=n,
        p_basic=float(p),
        p_total_bound=bound,
        fidelity_bound=1 - bound / 2,
    )


def _segment_captures(chain: ChainSpec, model: DisorderModel, trial: int,
                      lengths: np.ndarray, params: PacketParams) -> np.ndarray:
    """Capture in an ``N_B``-site window ``L`` sites ahead of the packet, at ``t = L / v_g``."""
    disorder = sample_disorder(model, chain.n_sites, trial, clamp_for(chain, model))
    prop = Propagator(build_hamiltonian(chain, disorder))
    amps0 = encode_packet(chain, params).amplitudes
    center = (chain.alice_size - 1) / 2 if params.center is None else params.center
    v = group_velocity(chain.coupling_j, params.momentum)
    out = np.empty(lengths.size)
    for i, length in enumerate(lengths):
        start = int(round(center + length - (chain.bob_size - 1) / 2))
        prob = np.abs(prop.evolve_amplitudes(amps0, length / v)) ** 2
        out[i] = prob[start:start + chain.bob_size].sum()
    return np.clip(out, 0.0, 1.0)


def _length_grid(chain: ChainSpec, params: PacketParams, min_length: int,
                 max_length: int | None) -> np.ndarray:
    center = (chain.alice_size - 1) / 2 if params.center is None else params.center
    last = chain.n_sites - chain.bob_size + (chain.bob_size - 1) / 2
    bound = int(math.floor(last - center - 0.5))
    if max_length is not None:
        bound = min(bound, max_length)
    if bound < min_length:
        raise InfeasiblePlan(f"chain too short for segments of {min_length} sites")
    return np.arange(min_length, bound + 1)


def segment_p_profile(
    delta: float,
    fit: EmpiricalFit | None,
    chain: ChainSpec,
    quantile: float = 0.95,
    trials: int = 0,
    seed: int = 0,
    distribution: Distribution = Distribution.UNIFORM,
    packet_params: PacketParams | None = None,
    min_length: int = 10,
    max_length: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Twirled per-segment parameter versus segment length.

    With ``trials > 0`` the ``quantile`` of ``p`` over simulated disorder
    realisations is returned.  Otherwise ``gamma`` comes from the fitted law,
    multiplied onto the clean-chain capture when the fit was made in relative
    mode.
    """
    params = packet_params or PacketParams()
    lengths = _length_grid(chain, params, min_length, max_length)
    v = group_velocity(chain.coupling_j, params.momentum)
    clean = _segment_captures(chain, DisorderModel(distribution, 0.0, seed), 0, lengths, params)
    twirl = np.vectorize(twirl_amplitude_damping)
    if trials > 0:
        model = DisorderModel(distribution, delta, seed)
        caps = np.array([_segment_captures(chain, model, i, lengths, params)
                         for i in range(trials)])
        p = twirl(np.clip(1 - caps, 0, 1))
        return lengths, np.quantile(p, quantile, axis=0)
    if fit is None:
        raise ValueError("need a fit or trials > 0")
    rel = np.array([predicted_gamma(fit, L / v, delta) for L in lengths])
    base = clean if fit.mode == "relative" else np.ones_like(clean)
    gamma = np.clip(1 - base * (1 - rel), 0, 1)
    return lengths, twirl(gamma)


def plan_transmission(
    delta: float,
    distance_sites: float,
    epsilon: float,
    fit: EmpiricalFit | None,
    chain: ChainSpec,
    quantile: float = 0.95,
    margin: float = DEFAULT_MARGIN,
    trials: int = 0,
    seed: int = 0,
    distribution: Distribution = Distribution.UNIFORM,
    packet_params: PacketParams | None = None,
    min_length: int = 10,
    max_length: int | None = None,
) -> Plan:
    """Longest safe segment, the number of segments, and the depth for them.

    The segment length is the largest ``L`` before the per-segment parameter
    first exceeds ``margin * 2/15``.  Planning against a quantile of a
    heterogeneous ``p`` is a heuristic; the depth guarantee is only proven
    for identical channels.
    """
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    if distance_sites <= 0:
        raise ValueError("distance must be positive")
    lengths, p_q = segment_p_profile(delta, fit, chain, quantile, trials, seed,
                                     distribution, packet_params, min_length, max_length)
    threshold = qec.THRESHOLD * margin
    bad = np.nonzero(p_q >= threshold)[0]
    last = lengths.size if bad.size == 0 else bad[0]
    if last == 0:
        raise InfeasiblePlan(
            f"p at the shortest segment ({lengths[0]} sites) is {p_q[0]:.6g}, "
            f"above the threshold {threshold:.6g}"
        )
    length = float(lengths[last - 1])
    p_basic = float(p_q[last - 1])
    params = packet_params or PacketParams()
    m = int(math.ceil(distance_sites / length))
    return make_plan(p_basic, m, epsilon, length,
                     group_velocity(chain.coupling_j, params.momentum))


# --- Pauli-frame simulation -------------------------------------------------


@dataclass(frozen=True)
class FixedSource:
    p: float

    def pool(self, plan: Plan) -> np.ndarray:
        return np.array([self.p])


@dataclass(frozen=True)
class EmpiricalSource:
    fit: EmpiricalFit
    delta: float

    def pool(self, plan: Plan) -> np.ndarray:
        gamma = predicted_gamma(self.fit, plan.segment_time, self.delta)
        return np.array([twirl_amplitude_damping(gamma)])


@dataclass(frozen=True)
class PhysicalSource:
    """Per-rail ``p`` drawn from simulated segments of length ``plan.segment_length_l``."""

    chain: ChainSpec
    model: DisorderModel
    pool_size: int = 256
    packet_params: PacketParams | None = None

    def pool(self, plan: Plan) -> np.ndarray:
        params = self.packet_params or PacketParams()
        lengths = np.array([plan.segment_length_l])
        caps = [
            _segment_captures(self.chain, self.model, i, lengths, params)[0]
            for i in range(self.pool_size)
        ]
        return np.array([twirl_amplitude_damping(1 - c) for c in caps])


@dataclass
class ProtocolEstimate:
    p_hat: float
    stderr: float
    ci_low: float
    ci_high: float
    logical_counts: dict = field(default_factory=dict)
    trials: int = 0
    p_total_bound: float = 0.0


def _decode_levels(x: np.ndarray, z: np.ndarray, levels: int):
    table = qec.decoding_table()
    weights = (1 << np.arange(5)).astype(np.int64)
    for _ in range(levels):
        b = x.shape[0]
        xb = x.reshape(b, -1, 5).astype(np.int64) @ weights
        zb = z.reshape(b, -1, 5).astype(np.int64) @ weights
        out = table[xb * 32 + zb]
        x, z = out[..., 0], out[..., 1]
    return x[:, 0], z[:, 0]


def simulate_protocol(
    plan: Plan,
    p_source=None,
    trials: int = 10_000,
    seed: int = 0,
    max_batch_entries: int = 2_000_000,
) -> ProtocolEstimate:
    """Monte Carlo estimate of the logical depolarizing parameter of ``plan``.

    Each rail of each segment independently suffers a uniformly random
    non-identity Pauli with probability ``3p/4``, ``p`` drawn from the
    source's pool.  Blocks are decoded innermost level first and the residual
    logical Paulis of successive segments multiply.  Syndrome extraction and
    correction themselves are noiseless.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    k, m, n = plan.level_k, plan.segments_m, plan.depth_n
    if k > MAX_LEVEL:
        raise ValueError(f"level {k} needs {n} rails per trial; refusing above level {MAX_LEVEL}")
    pool = (p_source or FixedSource(plan.p_basic)).pool(plan)
    rng = trial_rng(seed, 0x5EED)
    batch = max(1, min(trials, max_batch_entries // n))
    counts = np.zeros(4, dtype=np.int64)
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        fx = np.zeros(b, dtype=np.uint8)
        fz = np.zeros(b, dtype=np.uint8)
        for _ in range(m):
            p = pool[0] if pool.size == 1 else pool[rng.integers(pool.size, size=(b, n))]
            hit = rng.random((b, n)) < 0.75 * p
            kind = rng.integers(1, 4, size=(b, n))  # 1 = X, 2 = Y, 3 = Z
            x = (hit & (kind <= 2)).astype(np.uint8)
            z = (hit & (kind >= 2)).astype(np.uint8)
            lx, lz = _decode_levels(x, z, k)
            fx ^= lx
            fz ^= lz
        code = fx.astype(np.int64) + 2 * fz  # 0 I, 1 X, 3 Y, 2 Z
        counts += np.bincount(code, minlength=4)
        done += b
    n_fail = int(counts[1] + counts[2] + counts[3])
    q = n_fail / trials
    se = math.sqrt(q * (1 - q) / trials)
    zz = 1.96
    denom = 1 + zz**2 / trials
    centre = (q + zz**2 / (2 * trials)) / denom
    half = zz * math.sqrt(q * (1 - q) / trials + zz**2 / (4 * trials**2)) / denom
    scale = 4 / 3
    return ProtocolEstimate(
        p_hat=scale * q,
        stderr=scale * se,
        ci_low=scale * max(centre - half, 0.0),
        ci_high=scale * min(centre + half, 1.0),
        logical_counts={"I": int(counts[0]), "X": int(counts[1]),
                        "Y": int(counts[3]), "Z": int(counts[2])},
        trials=trials,
        p_total_bound=p_total_bound(float(np.max(pool)), k, m),
    )
