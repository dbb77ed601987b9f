"""Fourier eigenbasis on the circle fibre and the wavefield container.

A 2D field Psi(x, phi) carries the covariant norm sum |Psi|^2 b dx dphi; a 1D
mode field psi_k(x) = b^{1/2} * int conj(Phi_k) Psi dphi carries the plain
norm sum |psi|^2 dx, so the two are related by Parseval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .geometry import TWO_PI, TubeGeometry

NORM_CONVENTIONS = ("covariant", "reduced")


class GridMismatchError(ValueError):
    """Fields or grids that must agree do not."""


@dataclass(frozen=True)
class ModeBasis:
    """Complex exponentials Phi_k = exp(i k phi)/sqrt(2 pi), |k| <= k_max."""

    phi_period: float = TWO_PI
    hbar: float = 1.0
    mass: float = 1.0
    k_max: int = 8

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError("k_max must be non-negative")
        if not (self.hbar > 0 and self.mass > 0):
            raise ValueError("hbar and mass must be positive")

    @property
    def modes(self):
        return range(-self.k_max, self.k_max + 1)

    def _check(self, k):
        if abs(k) > self.k_max:
            raise ValueError(f"mode {k} exceeds cutoff k_max={self.k_max}")

    def eigenvalue(self, k: int) -> float:
        """Fibre energy hbar^2 k^2 / (2 m)."""
        self._check(k)
        return self.hbar**2 * k * k / (2.0 * self.mass)

    def phi(self, k: int, phi):
        self._check(k)
        return np.exp(1j * k * np.asarray(phi)) / math.sqrt(self.phi_period)

    def overlap_matrix(self, n_phi: int) -> np.ndarray:
        """Quadrature estimate of int Phi_k conj(Phi_k') dphi over the periodic grid."""
        grid = phi_grid(n_phi, self.phi_period)
        h = self.phi_period / n_phi
        F = np.array([self.phi(k, grid) for k in self.modes])
        return (F @ F.conj().T) * h


def eigenvalue(basis: ModeBasis, k: int) -> float:
    return basis.eigenvalue(k)


def phi_grid(n_phi: int, period: float = TWO_PI) -> np.ndarray:
    return np.arange(n_phi) * (period / n_phi)


def uniform_grid(x_min: float, x_max: float, n_x: int) -> np.ndarray:
    if n_x < 2:
        raise ValueError("need at least two grid points")
    return np.linspace(x_min, x_max, n_x)


@dataclass
class WaveField:
    """Complex samples on a uniform x-grid, optionally times a periodic phi-grid.

    ``values`` has shape (n_x,) for 1D fields and (n_x, n_phi) for 2D fields.
    The norm for the covariant convention uses the weight ``b`` (an array on
    the x-grid) that must be supplied when the field is built.
    """

    x: np.ndarray
    values: np.ndarray
    phi: np.ndarray | None = None
    norm_convention: str = "reduced"
    weight: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.norm_convention not in NORM_CONVENTIONS:
            raise ValueError(f"norm_convention must be one of {NORM_CONVENTIONS}")
        if self.phi is not None:
            self.phi = np.asarray(self.phi, dtype=float)
            if self.values.shape != (self.x.size, self.phi.size):
                raise GridMismatchError(f"values shape {self.values.shape} != {(self.x.size, self.phi.size)}")
        elif self.values.shape != (self.x.size,):
            raise GridMismatchError(f"values shape {self.values.shape} != {(self.x.size,)}")
        if self.norm_convention == "covariant" and self.weight is None:
            raise ValueError("covariant fields need the measure weight b(x)")
        if self.weight is not None:
            self.weight = np.asarray(self.weight, dtype=float)

    @property
    def dims(self) -> int:
        return 1 if self.phi is None else 2

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dphi(self) -> float:
        if self.phi is None:
            raise ValueError("1D field has no phi spacing")
        return TWO_PI / self.phi.size if self.phi.size else 0.0

    def density(self) -> np.ndarray:
        p = np.abs(self.values) ** 2
        if self.norm_convention == "covariant":
            p = p * (self.weight[:, None] if self.dims == 2 else self.weight)
        return p

    def norm(self) -> float:
        """Squared norm under the field's convention (rectangle rule)."""
        total = float(np.sum(self.density())) * self.dx
        if self.dims == 2:
            total *= self.dphi
        return total

    def with_values(self, values, **changes) -> "WaveField":
        return replace(self, values=np.asarray(values, dtype=complex), meta=dict(self.meta), **changes)

    def same_grid(self, other: "WaveField", atol=1e-12) -> bool:
        if self.dims != other.dims or self.x.shape != other.x.shape:
            return False
        if not np.allclose(self.x, other.x, atol=atol, rtol=0):
            return False
        if self.dims == 2:
            return self.phi.shape == other.phi.shape and np.allclose(self.phi, other.phi, atol=atol, rtol=0)
        return True


def field_2d(geom: TubeGeometry, x, n_phi: int, values, eta=0.0) -> WaveField:
    """2D covariant field on the (x, phi) grid with weight b(x)^d."""
    x = np.asarray(x, float)
    return WaveField(x, values, phi=phi_grid(n_phi, geom.phi_period), norm_convention="covariant",
                     weight=np.asarray(geom.sqrt_g(x, eta), float))


def project_mode(fld: WaveField, geom: TubeGeometry, k: int, eta=0.0) -> WaveField:
    """psi_k(x) = b^{d/2} * int conj(Phi_k) Psi dphi by the periodic trapezoid rule."""
    if fld.dims != 2:
        raise GridMismatchError("project_mode needs a 2D field")
    n_phi = fld.phi.size
    if n_phi < 1:
        raise GridMismatchError("empty phi grid")
    if not np.allclose(fld.phi, phi_grid(n_phi, geom.phi_period), atol=1e-12):
        raise GridMismatchError("phi grid is not the uniform periodic grid of the geometry")
    h = geom.phi_period / n_phi
    conj_mode = np.exp(-1j * k * fld.phi) / math.sqrt(geom.phi_period)
    amp = fld.values @ conj_mode * h
    b = geom.profile.b(fld.x, eta)
    return WaveField(fld.x, b ** (geom.d / 2.0) * amp, norm_convention="reduced", meta={"k": k})


def project_all_modes(fld: WaveField, geom: TubeGeometry, eta=0.0) -> dict[int, WaveField]:
    """All modes representable on the phi grid, via FFT (k in [-n/2, n/2))."""
    n_phi = fld.phi.size
    coeffs = np.fft.fft(fld.values, axis=1) * (geom.phi_period / n_phi) / math.sqrt(geom.phi_period)
    scale = geom.profile.b(fld.x, eta) ** (geom.d / 2.0)
    out = {}
    for k in range(-(n_phi // 2), (n_phi + 1) // 2):
        out[k] = WaveField(fld.x, scale * coeffs[:, k % n_phi], norm_convention="reduced", meta={"k": k})
    return out


def assemble_from_modes(mode_fields: Mapping[int, WaveField], geom: TubeGeometry, x=None, n_phi: int = 64,
                        eta=0.0) -> WaveField:
    """Psi(x, phi) = sum_k Phi_k(phi) b^{-d/2} psi_k(x)."""
    fields = list(mode_fields.values())
    if fields:
        x = fields[0].x
        for f in fields[1:]:
            if not f.same_grid(fields[0]):
                raise GridMismatchError("mode fields live on different x-grids")
    if x is None:
        raise GridMismatchError("an x-grid is required to assemble from an empty mode map")
    x = np.asarray(x, float)
    phis = phi_grid(n_phi, geom.phi_period)
    values = np.zeros((x.size, n_phi), complex)
    for k, f in mode_fields.items():
        if f.dims != 1:
            raise GridMismatchError("mode fields must be 1D")
        values += np.outer(f.values, np.exp(1j * k * phis) / math.sqrt(geom.phi_period))
    values *= (geom.profile.b(x, eta) ** (-geom.d / 2.0))[:, None]
    return field_2d(geom, x, n_phi, values, eta)
