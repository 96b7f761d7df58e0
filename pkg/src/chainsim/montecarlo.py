"""Disorder-averaged damping surfaces and the fit of ``1 - exp(-a t (d^2 + b d))``.

The receiver in a surface sweep is a window of ``N_B`` sites centred on the
position the clean packet has reached at time ``t`` (``center + v_g t``), so
every time in the grid is a transfer over distance ``v_g t`` and ``t = 0``
means no transfer at all.  ``geometry="fixed"`` keeps Bob on the last
``N_B`` sites instead.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Callable, Iterable, Sequence

import numpy as np

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
)

SATURATION = 0.999
# published fit of the damping law; reported next to ours, never used as a default
REFERENCE_ALPHA = 2.56
REFERENCE_BETA = 0.029


class FitError(RuntimeError):
    pass


def default_threads() -> int:
    env = os.environ.get("CHAINSIM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parallel_map(fn: Callable, items: Iterable, threads: int | None = None) -> list:
    items = list(items)
    threads = threads or default_threads()
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class SurfaceGrid:
    times: np.ndarray
    deltas: np.ndarray
    mean_gamma: np.ndarray  # (len(times), len(deltas))
    stderr_gamma: np.ndarray
    trials: int
    distribution: Distribution
    chain: ChainSpec | None = None
    seed: int = 0
    mode: str = "relative"
    geometry: str = "moving"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.deltas = np.asarray(self.deltas, dtype=float)
        self.mean_gamma = np.asarray(self.mean_gamma, dtype=float)
        self.stderr_gamma = np.asarray(self.stderr_gamma, dtype=float)
        shape = (self.times.size, self.deltas.size)
        if self.mean_gamma.shape != shape or self.stderr_gamma.shape != shape:
            raise ValueError(f"surface arrays must have shape {shape}")
        if np.any(self.mean_gamma < 0) or np.any(self.mean_gamma > 1):
            raise ValueError("mean_gamma entries must lie in [0, 1]")


def _windows(chain: ChainSpec, times: np.ndarray, geometry: str, params: PacketParams):
    """Start index of the receiver window for each time."""
    if geometry == "fixed":
        return np.full(times.size, chain.n_sites - chain.bob_size)
    if geometry != "moving":
        raise ValueError(f"unknown geometry {geometry!r}")
    center = (chain.alice_size - 1) / 2 if params.center is None else params.center
    v = group_velocity(chain.coupling_j, params.momentum)
    mid = center + v * times
    starts = np.rint(mid - (chain.bob_size - 1) / 2).astype(int)
    if starts.min() < 0 or starts.max() + chain.bob_size > chain.n_sites:
        raise ValueError(
            f"receiver window leaves the chain; need n_sites >= {starts.max() + chain.bob_size}"
        )
    return starts


def _captures(chain, model, trial, times, starts, params) -> np.ndarray:
    disorder = sample_disorder(model, chain.n_sites, trial, clamp_for(chain, model))
    prop = Propagator(build_hamiltonian(chain, disorder))
    amps0 = encode_packet(chain, params).amplitudes
    out = np.empty(times.size)
    for i, (t, s) in enumerate(zip(times, starts)):
        prob = np.abs(prop.evolve_amplitudes(amps0, t)) ** 2
        out[i] = prob[s:s + chain.bob_size].sum()
    return np.clip(out, 0.0, 1.0)


def gamma_surface(
    chain: ChainSpec,
    model_template: DisorderModel,
    times: Sequence[float],
    deltas: Sequence[float],
    trials: int,
    packet_params: PacketParams | None = None,
    mode: str = "relative",
    geometry: str = "moving",
    threads: int | None = None,
) -> SurfaceGrid:
    """Mean and standard error of ``gamma`` over ``trials`` realisations per cell.

    ``mode="raw"`` averages ``1 - C_B``; ``mode="relative"`` averages
    ``1 - C_B(delta) / C_B(0)`` (clipped to [0, 1]) so the clean-chain
    dispersion loss is divided out.  Trial ``i`` uses the disorder stream
    ``(seed, i)`` for every delta, so cells are reproducible in any order.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if mode not in ("relative", "raw"):
        raise ValueError(f"unknown mode {mode!r}")
    times = np.asarray(times, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    if times.size == 0 or deltas.size == 0:
        raise ValueError("times and deltas must be nonempty")
    if np.any(times < 0) or np.any(deltas < 0):
        raise ValueError("times and deltas must be nonnegative")
    params = packet_params or PacketParams()
    starts = _windows(chain, times, geometry, params)

    clean = _captures(chain, model_template.with_delta(0.0), 0, times, starts, params)
    if mode == "relative" and np.any(clean <= 0):
        raise FitError("clean-chain capture vanishes; relative mode is undefined")

    tasks = [(d, i) for d in range(deltas.size) for i in range(trials)]

    def run(task):
        d, i = task
        if deltas[d] == 0:
            return clean
        return _captures(chain, model_template.with_delta(deltas[d]), i, times, starts, params)

    caps = np.array(parallel_map(run, tasks, threads)).reshape(deltas.size, trials, times.size)
    if mode == "relative":
        gam = np.clip(1.0 - caps / clean, 0.0, 1.0)
    else:
        gam = np.clip(1.0 - caps, 0.0, 1.0)
    mean = gam.mean(axis=1).T
    # population std keeps stderr <= 0.5/sqrt(trials) for [0, 1] data
    stderr = (gam.std(axis=1) / math.sqrt(trials)).T
    return SurfaceGrid(
        times=times,
        deltas=deltas,
        mean_gamma=mean,
        stderr_gamma=stderr,
        trials=trials,
        distribution=model_template.distribution,
        chain=chain,
        seed=model_template.seed,
        mode=mode,
        geometry=geometry,
    )


@dataclass(frozen=True)
class EmpiricalFit:
    alpha: float
    beta: float
    r_squared: float
    distribution: Distribution = Distribution.UNIFORM
    mode: str = "relative"
    alpha_stderr: float = 0.0
    beta_stderr: float = 0.0
    linear_alpha: float = math.nan
    linear_beta: float = math.nan
    n_cells: int = 0

    def confidence_interval(self, name: str, z: float = 1.96) -> tuple[float, float]:
        value, se = getattr(self, name), getattr(self, f"{name}_stderr")
        return value - z * se, value + z * se

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distribution"] = Distribution(self.distribution).value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EmpiricalFit":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})


def predicted_gamma(fit: EmpiricalFit, t: float, delta: float) -> float:
    if t < 0 or delta < 0:
        raise ValueError("t and delta must be nonnegative")
    rate = fit.alpha * t * (delta**2 + fit.beta * delta)
    return float(min(max(-math.expm1(-rate), 0.0), 1.0))


def _model(params, t, d):
    a, b = params
    return -np.expm1(-a * t * (d**2 + b * d))


def _jacobian(params, t, d):
    a, b = params
    decay = np.exp(-a * t * (d**2 + b * d))
    return np.column_stack([decay * t * (d**2 + b * d), decay * a * t * d])


def _gauss_newton(params, t, d, y, iterations=50, tol=1e-14):
    params = np.asarray(params, dtype=float)
    for _ in range(iterations):
        r = y - _model(params, t, d)
        jac = _jacobian(params, t, d)
        step, *_ = np.linalg.lstsq(jac, r, rcond=None)
        # halve until the residual does not grow
        base = r @ r
        scale = 1.0
        while scale > 1e-6:
            trial = params + scale * step
            rt = y - _model(trial, t, d)
            if rt @ rt <= base:
                break
            scale /= 2
        else:
            break
        params = trial
        if np.all(np.abs(scale * step) <= tol * (1 + np.abs(params))):
            break
    return params


def fit_empirical(surface: SurfaceGrid) -> EmpiricalFit:
    """Least-squares estimate of ``(alpha, beta)``.

    A linear fit of ``-ln(1 - gamma) / t = alpha d^2 + alpha beta d`` seeds a
    Gauss-Newton refinement on ``gamma`` itself.  Cells with ``t = 0`` or
    ``gamma > 0.999`` are skipped.
    """
    tt, dd = np.meshgrid(surface.times, surface.deltas, indexing="ij")
    g = surface.mean_gamma
    usable = (tt > 0) & (g <= SATURATION)
    if not usable.any():
        raise FitError("every cell is saturated or at t = 0")
    if usable.sum() < 6:
        raise FitError(f"only {int(usable.sum())} usable cells; need at least 6")
    t, d, y = tt[usable], dd[usable], g[usable]

    rate = -np.log1p(-y) / t
    design = np.column_stack([d**2, d])
    (a_lin, ab_lin), *_ = np.linalg.lstsq(design, rate, rcond=None)
    if not a_lin > 0:
        raise FitError(f"fitted alpha {a_lin!r} is not positive")
    b_lin = ab_lin / a_lin

    a, b = _gauss_newton((a_lin, b_lin), t, d, y)
    if not a > 0:
        raise FitError(f"refined alpha {a!r} is not positive (linear estimate {a_lin!r})")

    resid = y - _model((a, b), t, d)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = max(y.size - 2, 1)
    jac = _jacobian((a, b), t, d)
    try:
        cov = np.linalg.inv(jac.T @ jac) * ss_res / dof
        a_se, b_se = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        a_se = b_se = math.nan
    return EmpiricalFit(
        alpha=float(a),
        beta=float(b),
        r_squared=float(min(max(r2, 0.0), 1.0)),
        distribution=surface.distribution,
        mode=surface.mode,
        alpha_stderr=float(a_se),
        beta_stderr=float(b_se),
        linear_alpha=float(a_lin),
        linear_beta=float(b_lin),
        n_cells=int(y.size),
    )


def synthetic_surface(
    alpha: float,
    beta: float,
    times: Sequence[float],
    deltas: Sequence[float],
    trials: int = 1,
    rng: np.random.Generator | None = None,
) -> SurfaceGrid:
    """Surface sampled from the empirical law, optionally with binomial noise."""
    times = np.asarray(times, float)
    deltas = np.asarray(deltas, float)
    tt, dd = np.meshgrid(times, deltas, indexing="ij")
    g = _model((alpha, beta), tt, dd)
    if rng is not None:
        g = rng.binomial(trials, g) / trials
    stderr = np.sqrt(g * (1 - g) / trials)
    return SurfaceGrid(times, deltas, g, stderr, trials, Distribution.UNIFORM,
                       mode="synthetic", geometry="synthetic")


def predicted_surface(fit: EmpiricalFit, times, deltas) -> np.ndarray:
    tt, dd = np.meshgrid(np.asarray(times, float), np.asarray(deltas, float), indexing="ij")
    return _model((fit.alpha, fit.beta), tt, dd)
