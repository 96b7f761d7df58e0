import math

import numpy as np
import pytest

from chainsim.montecarlo import (
    EmpiricalFit,
    FitError,
    SurfaceGrid,
    fit_empirical,
    gamma_surface,
    predicted_gamma,
    synthetic_surface,
)
from chainsim.spin_dynamics import ChainSpec, DisorderModel, Distribution

TIMES = np.arange(10, 121, 10.0)
DELTAS = np.arange(1, 11) * 0.05
SMALL = ChainSpec(120, 1 / math.sqrt(2), 16, 16)


@pytest.fixture(scope="module")
def small_surface():
    return gamma_surface(SMALL, DisorderModel("uniform", 0, 5), [10, 25, 40, 55],
                         [0.0, 0.1, 0.2, 0.3], trials=20, threads=1)


def test_predicted_gamma_examples():
    fit = EmpiricalFit(2.56, 0.029, 1.0)
    assert predicted_gamma(fit, 0.0, 0.3) == 0.0
    assert predicted_gamma(fit, 10.0, 0.0) == 0.0
    assert predicted_gamma(fit, 10, 0.1) == pytest.approx(1 - math.exp(-0.33024), abs=1e-12)
    assert predicted_gamma(fit, 10, 0.1) == pytest.approx(0.28125, abs=1e-5)


def test_synthetic_round_trip_noise_free():
    surf = synthetic_surface(2.56, 0.029, np.linspace(0.5, 6, 12), np.linspace(0.05, 0.5, 10))
    fit = fit_empirical(surf)
    assert fit.alpha == pytest.approx(2.56, abs=1e-6)
    assert fit.beta == pytest.approx(0.029, abs=1e-6)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    # refinement barely moves the linear estimate on clean data
    assert abs(fit.alpha - fit.linear_alpha) < 0.05 * fit.alpha
    assert abs(fit.beta - fit.linear_beta) < 0.05 * abs(fit.beta)


def test_synthetic_round_trip_with_binomial_noise():
    rng = np.random.default_rng(12)
    hits = 0
    for _ in range(20):
        surf = synthetic_surface(0.11, 0.15, TIMES, DELTAS, trials=50, rng=rng)
        fit = fit_empirical(surf)
        hits += (abs(fit.alpha - 0.11) <= 3 * fit.alpha_stderr
                 and abs(fit.beta - 0.15) <= 3 * fit.beta_stderr)
    assert hits >= 18


def test_synthetic_zero_time_row_is_zero():
    surf = synthetic_surface(2.56, 0.029, [0.0, 1.0], [0.1, 0.2])
    assert np.all(surf.mean_gamma[0] == 0)


def test_fit_failures():
    sat = SurfaceGrid([1, 2, 3], [0.1, 0.2, 0.3], np.ones((3, 3)), np.zeros((3, 3)), 10,
                      Distribution.UNIFORM)
    with pytest.raises(FitError):
        fit_empirical(sat)
    few = synthetic_surface(1.0, 0.1, [1.0, 2.0], [0.1, 0.2])
    with pytest.raises(FitError):
        fit_empirical(few)
    # gamma shrinking with disorder gives a negative alpha
    g = synthetic_surface(1.0, 0.1, [1, 2, 3], [0.1, 0.2, 0.3]).mean_gamma[:, ::-1]
    bad = SurfaceGrid([1, 2, 3], [0.1, 0.2, 0.3], g, np.zeros_like(g), 1, Distribution.UNIFORM)
    with pytest.raises(FitError):
        fit_empirical(bad)


def test_surface_shape_and_ranges(small_surface):
    s = small_surface
    assert s.mean_gamma.shape == (4, 4)
    assert np.all((s.mean_gamma >= 0) & (s.mean_gamma <= 1))
    assert np.all(s.stderr_gamma <= 0.5 / math.sqrt(s.trials) + 1e-15)


def test_zero_disorder_column_has_no_spread(small_surface):
    assert np.all(small_surface.stderr_gamma[:, 0] == 0)
    assert np.allclose(small_surface.mean_gamma[:, 0], 0)


def test_surface_nondecreasing_in_delta(small_surface):
    m, e = small_surface.mean_gamma, small_surface.stderr_gamma
    assert np.all(np.diff(m, axis=1) >= -2 * np.hypot(e[:, 1:], e[:, :-1]))


def test_surface_deterministic_and_schedule_independent(small_surface):
    again = gamma_surface(SMALL, DisorderModel("uniform", 0, 5), [10, 25, 40, 55],
                          [0.0, 0.1, 0.2, 0.3], trials=20, threads=3)
    assert np.array_equal(again.mean_gamma, small_surface.mean_gamma)
    assert np.array_equal(again.stderr_gamma, small_surface.stderr_gamma)


def test_surface_cells_do_not_depend_on_grid_order(small_surface):
    swapped = gamma_surface(SMALL, DisorderModel("uniform", 0, 5), [55, 40, 25, 10],
                            [0.3, 0.2, 0.1, 0.0], trials=20, threads=1)
    assert np.array_equal(swapped.mean_gamma[::-1, ::-1], small_surface.mean_gamma)
    single = gamma_surface(SMALL, DisorderModel("uniform", 0, 5), [40], [0.2], trials=20, threads=1)
    assert single.mean_gamma[0, 0] == small_surface.mean_gamma[2, 2]


def test_raw_mode_includes_dispersion_loss():
    raw = gamma_surface(SMALL, DisorderModel("uniform", 0, 5), [40], [0.0, 0.2], trials=5,
                        mode="raw", threads=1)
    assert raw.mean_gamma[0, 0] > 0
    assert raw.mean_gamma[0, 1] > raw.mean_gamma[0, 0]


def test_fixed_geometry_zero_before_arrival():
    s = gamma_surface(SMALL, DisorderModel("normal", 0, 5), [0.0, 5.0], [0.1], trials=3,
                      mode="raw", geometry="fixed", threads=1)
    assert np.allclose(s.mean_gamma, 1.0)


def test_window_must_fit():
    with pytest.raises(ValueError):
        gamma_surface(SMALL, DisorderModel("uniform", 0, 5), [500.0], [0.1], trials=1)


def test_fit_on_simulated_surface_quality(small_surface):
    fit = fit_empirical(small_surface)
    assert fit.alpha > 0
    assert fit.r_squared > 0.9
    assert fit.mode == "relative"
    lo, hi = fit.confidence_interval("alpha")
    assert lo < fit.alpha < hi


def test_fit_dict_round_trip():
    fit = EmpiricalFit(0.1, 0.2, 0.95, Distribution.NORMAL, "raw", 0.01, 0.02)
    assert EmpiricalFit.from_dict(fit.to_dict() | {"extra": 1}) == fit
