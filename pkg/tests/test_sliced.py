import math

import numpy as np
import pytest

from fibrepath.geometry import RadiusProfile, TubeGeometry
from fibrepath.kernels import PhysicsConstants, short_time_full
from fibrepath.pde import gaussian_packet
from fibrepath.quadrature import ExtrapolationError, fit_convergence_order, richardson_to_zero, trapezoid_weights
from fibrepath.sliced import (BudgetExceededError, ConvergenceTable, KernelMatrix, Lattice, PathEnumeration,
                              SliceSettings, band_limited_discrepancy, brute_force_full, brute_force_full_literal,
                              compose, discrete_mode_kernel, flat_cylinder_kernel, free_kernel, mehler_kernel,
                              mode_kernel_matrix, mode_sum_propagator, reduced_brute_force, reduced_path_propagator)

UNIT = PhysicsConstants()
FLAT = TubeGeometry(RadiusProfile("constant"))
TANH = TubeGeometry(RadiusProfile("tanh-step", {"amp": 0.2}))


# -- order fits and extrapolation -----------------------------------------------------------

def test_fit_convergence_order_examples():
    h = np.array([0.1, 0.05, 0.025, 0.0125])
    assert fit_convergence_order(zip(h, h**2)) == pytest.approx(2.0, abs=1e-12)
    assert fit_convergence_order(zip(h, 3 * h)) == pytest.approx(1.0, abs=1e-12)
    noise = 1 + 0.01 * np.random.default_rng(0).uniform(-1, 1, h.size)
    assert fit_convergence_order(zip(h, h**1.5 * noise)) == pytest.approx(1.5, abs=0.05)


@pytest.mark.parametrize("bad", [[(0.1, 1.0), (0.2, 2.0)], [(0.1, 0.0), (0.2, 1.0), (0.3, 2.0)],
                                 [(-0.1, 1.0), (0.2, 1.0), (0.3, 1.0)]])
def test_fit_convergence_order_rejects(bad):
    with pytest.raises(ValueError):
        fit_convergence_order(bad)


def test_richardson_exact_for_quadratics():
    d = np.array([0.05, 0.025, 0.0125])
    est, err = richardson_to_zero(d, 2.0 + 3 * d - 7 * d**2)
    assert est == pytest.approx(2.0, abs=1e-13)
    with pytest.raises(ExtrapolationError):
        richardson_to_zero([0.1, 0.1], [1.0, 2.0])


def test_trapezoid_weights():
    x = np.linspace(0, 1, 5)
    w = trapezoid_weights(x)
    assert w.sum() == pytest.approx(1.0)
    assert w[0] == pytest.approx(0.125)


# -- composition -----------------------------------------------------------------------------

def _kernel(n=5):
    rng = np.random.default_rng(1)
    x = np.linspace(-1, 1, n)
    return KernelMatrix(x, x, rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)), trapezoid_weights(x), 0.1)


def test_compose_one_step_is_identity():
    K = _kernel()
    assert np.array_equal(compose(K, 1).K, K.K)


def test_compose_matches_repeated_products():
    K = _kernel()
    M = K.K * K.weights[None, :]
    expected = K.K
    for _ in range(4):
        expected = M @ expected
    assert np.allclose(compose(K, 5).K, expected, rtol=1e-12)


def test_compose_budget_and_steps():
    with pytest.raises(BudgetExceededError):
        compose(_kernel(), 64, budget=10)
    with pytest.raises(ValueError):
        compose(_kernel(), 0)


def _interior_error(K, exact, x, margin=2.0):
    sel = np.abs(x) <= margin
    sub = np.ix_(sel, sel)
    return np.max(np.abs(K[sub] - exact[sub])) / np.max(np.abs(exact[sub]))


def test_free_kernel_composes_to_free_kernel():
    """Regulated time keeps the lattice sums absolutely convergent."""
    x = np.linspace(-10, 10, 2001)
    T = 0.5 * (1 - 0.3j)
    for N in (2, 4):
        K = reduced_path_propagator(FLAT, UNIT, 0, x, 0.5, N, delta=0.3)
        assert _interior_error(K.K, free_kernel(x[:, None], x[None, :], T), x) < 1e-6


def test_mode_two_is_free_times_phase():
    x = np.linspace(-10, 10, 2001)
    T = 0.5 * (1 - 0.3j)
    K0 = reduced_path_propagator(FLAT, UNIT, 0, x, 0.5, 3, delta=0.3).K
    K2 = reduced_path_propagator(FLAT, UNIT, 2, x, 0.5, 3, delta=0.3).K
    assert np.allclose(K2, K0 * np.exp(-2j * T), rtol=1e-12, atol=0)


def test_harmonic_composition_converges_to_mehler():
    c = PhysicsConstants(V0="0.5*x**2")
    x = np.linspace(-10, 10, 2001)
    T = 0.5 * (1 - 0.3j)
    exact = mehler_kernel(x[:, None], x[None, :], T)
    errs = [_interior_error(reduced_path_propagator(FLAT, c, 0, x, 0.5, N, delta=0.3).K, exact, x) for N in (2, 4, 8)]
    assert errs[0] > errs[1] > errs[2]
    assert fit_convergence_order(zip([0.25, 0.125, 0.0625], errs)) >= 0.8


def test_composed_kernel_preserves_norm():
    x = np.linspace(-12, 12, 1601)
    psi = gaussian_packet(x, 1.0)
    K = reduced_path_propagator(TANH, UNIT, 1, x, 0.3, 6)
    out = K.apply(psi)
    dx = x[1] - x[0]
    assert abs(np.sum(np.abs(out) ** 2) * dx - 1.0) < 1e-3


def test_mode_sum_flat_matches_image_sum():
    x = np.linspace(-10, 10, 1001)
    delta, T = 0.3, 0.5
    Tc = T * (1 - 1j * delta)
    res = mode_sum_propagator(FLAT, UNIT, (0.2, 0.7, 0.0, 0.1), x, T, 2, k_max=12, delta=delta,
                              tail_tol=1e-4)
    exact = flat_cylinder_kernel(0.2, 0.7, 0.0, 0.1, Tc)
    assert abs(res.value - exact) / abs(exact) < 1e-4
    assert not res.flagged


def test_mode_sum_flags_truncation():
    x = np.linspace(-10, 10, 1001)
    res = mode_sum_propagator(FLAT, UNIT, (0.2, 0.7, 0.0, 0.1), x, 0.5, 2, k_max=1, delta=0.3, tail_tol=1e-4)
    assert res.flagged


def test_mode_sum_rejects_off_grid_endpoints():
    with pytest.raises(ValueError):
        mode_sum_propagator(FLAT, UNIT, (0.123, 0.0, 0.0, 0.0), np.linspace(-1, 1, 11), 0.1, 1, 1)


def test_mode_sum_projection_recovers_mode_entry():
    x = np.linspace(-6, 6, 301)
    n_phi = 32
    phis = np.arange(n_phi) * 2 * math.pi / n_phi
    vals = np.array([mode_sum_propagator(TANH, UNIT, (0.2, p, 0.0, 0.0), x, 0.3, 2, k_max=3).value for p in phis])
    k = 2
    proj = np.sum(vals * np.exp(-1j * k * phis)) * 2 * math.pi / n_phi
    i_f, i_0 = int(np.argmin(abs(x - 0.2))), int(np.argmin(abs(x)))
    entry = reduced_path_propagator(TANH, UNIT, k, x, 0.3, 2).K[i_f, i_0]
    scale = (TANH.b(0.2) * TANH.b(0.0)) ** -0.5
    assert abs(proj - scale * entry) < 1e-10 * abs(entry)


# -- lattice sums ----------------------------------------------------------------------------

LAT = Lattice(-0.75, 0.75, 4, 6)
SETTINGS = SliceSettings(delta=0.05, w_max=1, point="midpoint")


def test_path_enumeration_budget():
    en = PathEnumeration(Lattice(-1, 1, 7, 8), N=4)
    assert en.path_count() == 7**3 * 8**3
    with pytest.raises(BudgetExceededError):
        en.check_budget(1000)
    with pytest.raises(BudgetExceededError):
        brute_force_full(TANH, UNIT, Lattice(-1, 1, 7, 8), 1.0, 4, SliceSettings(budget=1000))


def test_brute_force_single_slice_is_kernel():
    res = brute_force_full(TANH, UNIT, LAT, 0.4, 1, SETTINGS)
    x, phis = LAT.x, LAT.phi
    direct = short_time_full(TANH, UNIT, x[2], phis[3], x[1], 0.0, 0.4, w_max=1, delta=0.05, point="midpoint")
    assert res.P[2, 1, 3] == pytest.approx(direct, rel=1e-12)


def test_brute_force_fft_matches_literal_loop():
    lat = Lattice(-0.75, 0.75, 3, 4)
    res = brute_force_full(TANH, UNIT, lat, 0.9, 3, SETTINGS)
    for i_f, j, i_0 in [(0, 0, 0), (2, 1, 0), (1, 3, 2)]:
        lit = brute_force_full_literal(TANH, UNIT, lat, 0.9, 3, (i_f, j, i_0, 0), SETTINGS)
        assert res.P[i_f, i_0, j] == pytest.approx(lit, rel=1e-11)


def test_history_brute_force_matches_literal_loop():
    geom = TubeGeometry(RadiusProfile("tanh-step", {"amp": 0.2}, history_coupling=0.3))
    lat = Lattice(-0.75, 0.75, 3, 4)
    f = np.polynomial.Polynomial([0.1, 1.0])
    res = brute_force_full(geom, UNIT, lat, 0.9, 3, SETTINGS, f=f)
    lit = brute_force_full_literal(geom, UNIT, lat, 0.9, 3, (2, 1, 0, 0), SETTINGS, f=f)
    assert res.P[2, 0, 1] == pytest.approx(lit, rel=1e-11)


def test_projected_full_sum_is_reduced_sum_with_discrete_kernel():
    """With the lattice mode kernel in place of the continuum one the reduction is exact."""
    res = brute_force_full(TANH, UNIT, LAT, 0.8, 3, SETTINGS)
    eps = 0.8 / 3
    w = LAT.x_weights
    for k in (0, 1):
        Kq = discrete_mode_kernel(TANH, UNIT, k, LAT, eps, settings=SETTINGS)
        R = Kq @ np.diag(w) @ Kq @ np.diag(w) @ Kq
        assert np.allclose(res.mode(k), R, rtol=1e-11, atol=1e-13 * np.max(np.abs(R)))


def test_band_limited_discrepancy_shrinks_with_phi_refinement():
    lat_small, lat_big = Lattice(-0.75, 0.75, 5, 8), Lattice(-0.75, 0.75, 5, 16)
    out = []
    for lat in (lat_small, lat_big):
        res = brute_force_full(TANH, UNIT, lat, 1.2, 3, SETTINGS)
        R = {k: reduced_brute_force(TANH, UNIT, k, lat, 1.2, 3, SETTINGS) for k in (-1, 0, 1)}
        out.append(band_limited_discrepancy(res.modes, R, lat.n_phi)[0])
    assert out[1] < out[0]


def test_reduced_brute_force_equals_matrix_composition():
    lat = Lattice(-1, 1, 6, 1)
    s = SliceSettings(delta=0.05, point="later")
    R = reduced_brute_force(TANH, UNIT, 1, lat, 0.6, 3, s)
    K = compose(mode_kernel_matrix(TANH, UNIT, 1, lat.x, 0.2, delta=0.05), 3).K
    assert np.allclose(R, K, rtol=1e-12)


def test_convergence_table_handles_exact_rows(tmp_path):
    t = ConvergenceTable()
    for N, e in [(1, 0.0), (2, 0.1), (4, 0.025), (8, 0.00625)]:
        t.add(N, 10, 1, 1.0 / N, e)
    assert t.slopes()[0] == pytest.approx(2.0)
    t.write_csv(tmp_path / "conv.csv")
    assert (tmp_path / "conv.csv").read_text().startswith("N,")
