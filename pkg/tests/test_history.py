import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fibrepath.geometry import RadiusProfile, TubeGeometry
from fibrepath.history import (EtaRangeError, HistoryContext, augmented_grid_evolution, cancellation_deviation,
                               eta_of_path, history_full_brute_force, history_reduced_brute_force, initial_augmented,
                               time_dependent_full_brute_force, time_dependent_reduced_brute_force)
from fibrepath.kernels import DiscretePath, PhysicsConstants
from fibrepath.pde import evolve_reduced_1d, gaussian_packet
from fibrepath.polyexpr import parse_polynomial
from fibrepath.quadrature import fit_convergence_order
from fibrepath.sliced import Lattice, SliceSettings, band_limited_discrepancy, reduced_brute_force
from fibrepath.spectral import WaveField

UNIT = PhysicsConstants()
SETTINGS = SliceSettings(delta=0.05, w_max=1, point="midpoint")
LAT = Lattice(-0.75, 0.75, 5, 8)


def geom_mu(mu, nu=0.0):
    return TubeGeometry(RadiusProfile("tanh-step", {"amp": 0.2}, history_coupling=mu, history_curvature=nu))


# -- eta along paths -------------------------------------------------------------------------

def test_eta_time_functional():
    path = DiscretePath(np.linspace(-1, 1, 201), 0.01)
    eta = eta_of_path(path, parse_polynomial("1"))
    assert eta[0] == 0
    assert eta[-1] == pytest.approx(2.0, abs=1e-13)


def test_eta_constant_path():
    path = DiscretePath(np.full(51, 3.0), 0.01)
    assert eta_of_path(path, parse_polynomial("x"))[-1] == pytest.approx(1.5, abs=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=12))
def test_eta_even_integrand_ignores_reflection(xs):
    f = parse_polynomial("x**2")
    a = eta_of_path(DiscretePath(np.array(xs), 0.1), f)
    b = eta_of_path(DiscretePath(-np.array(xs), 0.1), f)
    assert np.array_equal(a, b)


def test_context_grid_and_reach():
    ctx = HistoryContext("x**2 - 1", (-1.0, 2.0), 0.5)
    assert np.allclose(ctx.eta_grid, [-1, -0.5, 0, 0.5, 1, 1.5, 2])
    assert ctx.f_extremes(-2.0, 1.0) == (-1.0, 3.0)
    assert ctx.reachable(-2.0, 1.0, 0.5) == (-0.5, 1.5)
    ctx.check_covers(-2.0, 1.0, 0.5)
    with pytest.raises(EtaRangeError):
        ctx.check_covers(-2.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        HistoryContext("x", (1.0, 0.0))


# -- lattice sums in history mode ---------------------------------------------------------------

def test_zero_coupling_equals_static_sum():
    ctx = HistoryContext("x")
    geom = TubeGeometry(RadiusProfile("tanh-step", {"amp": 0.2}))
    a = history_reduced_brute_force(geom, ctx, UNIT, 1, LAT, 1.2, 3, SETTINGS)
    b = reduced_brute_force(geom, UNIT, 1, LAT, 1.2, 3, SETTINGS)
    assert np.array_equal(a, b)


def test_coupling_continuity():
    ctx = HistoryContext("x")
    a = history_reduced_brute_force(geom_mu(1e-12), ctx, UNIT, 1, LAT, 1.2, 3, SETTINGS)
    b = history_reduced_brute_force(geom_mu(0.0), ctx, UNIT, 1, LAT, 1.2, 3, SETTINGS)
    assert np.max(np.abs(a - b)) / np.max(np.abs(b)) < 1e-10


def test_unit_integrand_is_time_dependence():
    geom = geom_mu(0.3)
    one = HistoryContext("1")
    a = history_reduced_brute_force(geom, one, UNIT, 1, LAT, 1.2, 3, SETTINGS)
    b = time_dependent_reduced_brute_force(geom, UNIT, 1, LAT, 1.2, 3, SETTINGS)
    assert np.array_equal(a, b)
    lat = Lattice(-0.75, 0.75, 3, 4)
    fa = history_full_brute_force(geom, one, UNIT, lat, 0.9, 3, SETTINGS)
    fb = time_dependent_full_brute_force(geom, UNIT, lat, 0.9, 3, SETTINGS)
    assert np.array_equal(fa.P, fb.P)


def test_history_full_sum_matches_reduced_sums():
    geom = geom_mu(0.2)
    ctx = HistoryContext("x")
    lat = Lattice(-0.75, 0.75, 7, 16)
    T, N = 1.6, 4
    s = SliceSettings(delta=0.05, w_max=1, point="midpoint", budget=20_000_000)
    full = history_full_brute_force(geom, ctx, UNIT, lat, T, N, s)
    R = {k: history_reduced_brute_force(geom, ctx, UNIT, k, lat, T, N, s) for k in (-1, 0, 1)}
    total, _ = band_limited_discrepancy(full.modes, R, lat.n_phi)
    assert total < 0.05


def test_cancellation_is_second_order():
    geom = geom_mu(0.2, nu=0.5)
    xs = np.array([0.3, -0.5, 0.75, 0.1, -0.2])
    eps = [0.4, 0.2, 0.1, 0.05]
    devs = [cancellation_deviation(geom, DiscretePath(xs, e), parse_polynomial("x")) for e in eps]
    assert fit_convergence_order(zip(eps, devs)) >= 1.8


def test_cancellation_exact_for_linear_log_radius():
    geom = geom_mu(0.2)
    xs = np.array([0.3, -0.5, 0.75, 0.1, -0.2])
    assert cancellation_deviation(geom, DiscretePath(xs, 0.1), parse_polynomial("x")) < 1e-15


# -- augmented evolution ------------------------------------------------------------------------

X = np.linspace(-12, 12, 256)
PSI = gaussian_packet(X, 1.0, x0=-3.0, p0=1.0)


def test_augmented_zero_integrand_is_static_evolution():
    geom = geom_mu(0.3)
    ctx = HistoryContext("0", (-0.1, 0.1), 0.05)
    aug = augmented_grid_evolution(initial_augmented(X, ctx.eta_grid, PSI), geom, ctx, UNIT, 1, 0.005, 40)
    ref = evolve_reduced_1d(WaveField(X, PSI), geom, UNIT, k=1, dt=0.005, steps=40)
    assert np.array_equal(aug.marginal(), ref.values)


def test_augmented_unit_integrand_is_time_dependent_evolution():
    geom = geom_mu(0.3)
    dt, steps = 0.005, 100
    one = HistoryContext("1", (0.0, dt * steps), dt)
    aug = augmented_grid_evolution(initial_augmented(X, one.eta_grid, PSI), geom, one, UNIT, 1, dt, steps)
    ref = evolve_reduced_1d(WaveField(X, PSI), geom, UNIT, k=1, dt=dt, steps=steps, time_dependent=True)
    assert np.max(np.abs(aug.marginal() - ref.values)) < 1e-6


def test_augmented_kernel_step_reproduces_lattice_sum():
    geom = geom_mu(0.2)
    ctx = HistoryContext("x")
    lat = Lattice(-0.75, 0.75, 5, 1)
    T, N = 1.2, 3
    eps = T / N
    R = history_reduced_brute_force(geom, ctx, UNIT, 1, lat, T, N, SETTINGS)
    d_eta = 0.375 * eps
    lo, hi = ctx.reachable(lat.x_min, lat.x_max, T)
    aug_ctx = HistoryContext(ctx.f, (lo - d_eta, hi + d_eta), d_eta)
    w = lat.x_weights
    for i0 in range(lat.n_x):
        start = initial_augmented(lat.x, aug_ctx.eta_grid, np.eye(lat.n_x)[i0] / w[i0])
        out = augmented_grid_evolution(start, geom, aug_ctx, UNIT, 1, eps, N, x_step="kernel", settings=SETTINGS,
                                       interpolate=False)
        assert np.allclose(out.marginal(), R[:, i0], rtol=1e-12, atol=1e-14 * np.max(np.abs(R)))


def test_augmented_leaving_eta_grid_raises():
    geom = geom_mu(0.3)
    one = HistoryContext("1", (0.0, 0.02), 0.005)
    with pytest.raises(EtaRangeError):
        augmented_grid_evolution(initial_augmented(X, one.eta_grid, PSI), geom, one, UNIT, 1, 0.005, 10)


def test_augmented_cfl_guard():
    ctx = HistoryContext("3", (0.0, 1.0), 0.01)
    with pytest.raises(EtaRangeError):
        augmented_grid_evolution(initial_augmented(X, ctx.eta_grid, PSI), geom_mu(0.3), ctx, UNIT, 1, 0.005, 1)
