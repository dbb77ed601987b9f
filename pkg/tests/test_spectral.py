import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fibrepath import fieldio
from fibrepath.geometry import RadiusProfile, TubeGeometry
from fibrepath.spectral import (GridMismatchError, ModeBasis, WaveField, assemble_from_modes, eigenvalue, field_2d,
                                phi_grid, project_all_modes, project_mode)

GEOM = TubeGeometry(RadiusProfile("tanh-step", {"amp": 0.3}))
X = np.linspace(-4, 4, 41)


def gauss(x, x0=0.0):
    return np.exp(-(x - x0) ** 2) * (1 + 0.2j * x)


def mode_field(k, psi, n_phi=16):
    phis = phi_grid(n_phi)
    vals = np.outer(psi * GEOM.b(X) ** -0.5, np.exp(1j * k * phis) / math.sqrt(2 * math.pi))
    return field_2d(GEOM, X, n_phi, vals)


def test_eigenvalues():
    assert eigenvalue(ModeBasis(), 0) == 0
    assert eigenvalue(ModeBasis(), 3) == 4.5
    assert eigenvalue(ModeBasis(hbar=2.0), 1) == 2.0
    with pytest.raises(ValueError):
        ModeBasis(k_max=2).eigenvalue(3)


def test_basis_orthonormal_on_grid():
    basis = ModeBasis(k_max=4)
    assert np.allclose(basis.overlap_matrix(16), np.eye(9), atol=1e-13)


def test_project_recovers_single_mode():
    psi = gauss(X)
    out = project_mode(mode_field(2, psi, n_phi=8), GEOM, 2)
    assert np.max(np.abs(out.values - psi)) < 1e-12


def test_project_other_mode_is_zero():
    out = project_mode(mode_field(1, gauss(X)), GEOM, 3)
    assert np.max(np.abs(out.values)) < 1e-12


def test_project_mixed_state():
    g, h = gauss(X, -1.0), gauss(X, 1.0)
    mixed = mode_field(1, g)
    mixed = mixed.with_values(mixed.values + mode_field(2, h).values)
    assert np.max(np.abs(project_mode(mixed, GEOM, 2).values - h)) < 1e-12
    assert np.max(np.abs(project_mode(mixed, GEOM, 1).values - g)) < 1e-12


def test_assemble_constant_mode_zero():
    psi = WaveField(X, np.ones(X.size))
    out = assemble_from_modes({0: psi}, GEOM, n_phi=8)
    expected = (GEOM.b(X) ** -0.5 / math.sqrt(2 * math.pi))[:, None] * np.ones((1, 8))
    assert np.allclose(out.values, expected, atol=1e-15)


def test_assemble_empty_map_is_zero():
    out = assemble_from_modes({}, GEOM, x=X, n_phi=8)
    assert out.values.shape == (X.size, 8)
    assert not np.any(out.values)


def test_assemble_rejects_mismatched_grids():
    with pytest.raises(GridMismatchError):
        assemble_from_modes({0: WaveField(X, np.ones(X.size)), 1: WaveField(X[:-1], np.ones(X.size - 1))}, GEOM)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_round_trip_band_limited(seed, k_max):
    rng = np.random.default_rng(seed)
    n_phi = 2 * k_max + 2
    modes = {k: WaveField(X, rng.normal(size=X.size) + 1j * rng.normal(size=X.size)) for k in range(-k_max, k_max + 1)}
    fld = assemble_from_modes(modes, GEOM, n_phi=n_phi)
    back = assemble_from_modes({k: project_mode(fld, GEOM, k) for k in modes}, GEOM, n_phi=n_phi)
    assert np.max(np.abs(back.values - fld.values)) < 1e-12
    # Parseval: covariant 2D norm equals the sum of reduced mode norms
    total = sum(project_mode(fld, GEOM, k).norm() for k in modes)
    assert fld.norm() == pytest.approx(total, rel=1e-12)


def test_project_all_modes_matches_single_projection():
    rng = np.random.default_rng(3)
    vals = rng.normal(size=(X.size, 8)) + 1j * rng.normal(size=(X.size, 8))
    fld = field_2d(GEOM, X, 8, vals)
    every = project_all_modes(fld, GEOM)
    for k in (-4, -1, 0, 3):
        assert np.allclose(every[k].values, project_mode(fld, GEOM, k).values, atol=1e-13)


def test_wavefield_shape_checks():
    with pytest.raises(GridMismatchError):
        WaveField(X, np.ones(3))
    with pytest.raises(ValueError):
        WaveField(X, np.ones(X.size), norm_convention="covariant")


# -- field I/O ----------------------------------------------------------------------

def _sample_fields():
    rng = np.random.default_rng(7)
    one = WaveField(X, rng.normal(size=X.size) + 1j * rng.normal(size=X.size))
    two = field_2d(GEOM, X, 6, rng.normal(size=(X.size, 6)) + 1j * rng.normal(size=(X.size, 6)))
    return one, two


def test_binary_round_trip(tmp_path):
    for fld in _sample_fields():
        path = tmp_path / f"f{fld.dims}.bin"
        fieldio.write_binary(fld, path)
        back = fieldio.read_binary(path)
        assert back.norm_convention == fld.norm_convention
        assert np.array_equal(back.values, fld.values)
        assert np.array_equal(back.x, fld.x)
        assert back.norm() == fld.norm()


def test_csv_round_trip_is_exact(tmp_path):
    one, two = _sample_fields()
    fieldio.write_csv(one, tmp_path / "one.csv")
    assert np.array_equal(fieldio.read_csv(tmp_path / "one.csv").values, one.values)
    fieldio.write_csv(two, tmp_path / "two.csv")
    back = fieldio.read_csv(tmp_path / "two.csv", weight=two.weight)
    assert np.array_equal(back.values, two.values)
    assert back.norm() == pytest.approx(two.norm(), rel=1e-15)


def test_binary_rejects_foreign_buffer():
    with pytest.raises(ValueError):
        fieldio.from_bytes(b"XXXX" + bytes(40))
