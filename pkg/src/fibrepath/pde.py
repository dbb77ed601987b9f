"""Grid Schrodinger solvers used as oracles.

The x-direction uses a staggered flux form of (1/b) d/dx (b d/dx): gradients
live on cell midpoints where b is sampled exactly, so the discrete operator is
self-adjoint under the b-weighted inner product. Dirichlet boundaries are
imposed through zero ghost values. The phi-direction is handled spectrally:
each Fourier mode is advanced independently (the Hamiltonian commutes with
rotations of the fibre).

Time stepping is Crank-Nicolson on chi = b^{1/2} c_k, for which the operator is
a real symmetric band matrix; the scheme is then exactly unitary in the
covariant norm, also when b depends on time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded

from .geometry import TubeGeometry
from .kernels import (PhysicsConstants, classical_effective_potential, d_classical_potential_dx, d_delta_v_dx,
                      delta_v_eff_from_b, mode_energy)
from .spectral import WaveField, field_2d, phi_grid

log = logging.getLogger(__name__)

_STENCILS = {
    # coefficients of psi_{i-1}, psi_i, psi_{i+1}, psi_{i+2} for the gradient at i+1/2, times h
    2: (0.0, -1.0, 1.0, 0.0),
    4: (1.0 / 24.0, -27.0 / 24.0, 27.0 / 24.0, -1.0 / 24.0),
}


class BoundaryMassError(RuntimeError):
    """The wavefunction reached the truncated x-boundary."""


def staggered_gradient(n: int, h: float, order: int = 4):
    """Sparse (n_mid, n) gradient matrix and midpoint offsets (in units of h from x_0).

    Nodes outside 0..n-1 are zero ghosts. Midpoints run over every position at
    which the stencil touches at least one interior node.
    """
    if order not in _STENCILS:
        raise ValueError(f"order must be one of {sorted(_STENCILS)}")
    coeffs = _STENCILS[order]
    pad = 1 if order == 4 else 0
    first = -1 - pad
    mids = np.arange(first, n + pad) + 0.5  # i + 1/2
    rows, cols, vals = [], [], []
    for off, c in zip((-1, 0, 1, 2), coeffs):
        if not c:
            continue
        j = np.arange(first, n + pad) + off
        ok = (j >= 0) & (j < n)
        rows.append(np.nonzero(ok)[0])
        cols.append(j[ok])
        vals.append(np.full(ok.sum(), c / h))
    G = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(mids.size, n))
    return G, mids


def _to_banded(A, bw: int) -> np.ndarray:
    A = sparse.csr_matrix(A)
    n = A.shape[0]
    ab = np.zeros((2 * bw + 1, n), dtype=A.dtype)
    for k in range(-bw, bw + 1):
        diag = A.diagonal(k)
        if k >= 0:
            ab[bw - k, k:] = diag
        else:
            ab[bw - k, :n + k] = diag
    return ab


@dataclass
class Grid1D:
    x: np.ndarray
    order: int = 4

    def __post_init__(self):
        self.x = np.asarray(self.x, float)
        if self.x.size < 5:
            raise ValueError("need at least 5 grid points")
        h = np.diff(self.x)
        if not np.allclose(h, h[0], rtol=1e-10, atol=0):
            raise ValueError("x-grid must be uniform")
        if self.order not in _STENCILS:
            raise ValueError("order must be 2 or 4")

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def bandwidth(self) -> int:
        return 3 if self.order == 4 else 1

    def gradient(self):
        G, mids = staggered_gradient(self.x.size, self.h, self.order)
        return G, self.x[0] + mids * self.h


def symmetric_operator(grid: Grid1D, b_nodes, b_mid):
    """W^{-1/2} G^T B G W^{-1/2}: the symmetrised version of -(1/b) d/dx(b d/dx)."""
    G, _ = grid.gradient()
    S = G.T @ sparse.diags(b_mid) @ G
    s = sparse.diags(1.0 / np.sqrt(b_nodes))
    return (s @ S @ s).tocsr()


class ModeStepper:
    """Crank-Nicolson for i hbar d chi/dt = H(t) chi on one x-grid.

    ``hamiltonian(t)`` returns a sparse real-symmetric band matrix.
    ``skew(t)`` optionally returns a diagonal of extra anti-Hermitian terms
    (the ablation of the compensation term), so the step is no longer unitary.
    """

    def __init__(self, grid: Grid1D, hbar: float, hamiltonian, skew=None, static: bool = True):
        self.grid = grid
        self.hbar = hbar
        self.hamiltonian = hamiltonian
        self.skew = skew
        self.static = static
        self._cache = None

    def _bands(self, t, dt):
        if self.static and self._cache is not None and self._cache[0] == dt:
            return self._cache[1], self._cache[2]
        bw = self.grid.bandwidth
        H = sparse.csr_matrix(self.hamiltonian(t + 0.5 * dt), dtype=complex)
        if self.skew is not None:
            H = H + sparse.diags(self.skew(t + 0.5 * dt))
        a = 0.5j * dt / self.hbar
        eye = sparse.identity(H.shape[0], dtype=complex, format="csr")
        lhs = _to_banded(eye + a * H, bw)
        rhs = (eye - a * H).tocsr()
        if self.static:
            self._cache = (dt, lhs, rhs)
        return lhs, rhs

    def step(self, chi, t, dt):
        lhs, rhs = self._bands(t, dt)
        bw = self.grid.bandwidth
        return solve_banded((bw, bw), lhs, rhs @ chi, check_finite=False)


def _boundary_check(values, strict: bool, threshold: float = 1e-6):
    mag = np.abs(values)
    peak = mag.max()
    if peak == 0:
        return 0.0
    edge = mag[[0, -1]].max() if mag.ndim == 1 else max(mag[0].max(), mag[-1].max())
    ratio = float(edge / peak)
    if ratio > threshold:
        msg = f"boundary amplitude ratio {ratio:.2e} exceeds {threshold:.0e}"
        if strict:
            raise BoundaryMassError(msg)
        log.warning(msg)
    return ratio


def reduced_hamiltonian(grid: Grid1D, geom: TubeGeometry, constants: PhysicsConstants, E_phi: float,
                        include_delta_v: bool = True, eta=0.0):
    """Matrix of -(hbar^2/2m) d^2/dx^2 + V_cl + dV (unit-weight flux form)."""
    n = grid.x.size
    G, _ = grid.gradient()
    K = G.T @ G
    V = classical_effective_potential(geom, constants, grid.x, E_phi, eta)
    if include_delta_v:
        V = V + delta_v_eff_from_b(geom, constants, grid.x, eta=eta)
    return (constants.hbar**2 / (2 * constants.mass) * K + sparse.diags(V * np.ones(n))).tocsr()


def covariant_mode_hamiltonian(grid: Grid1D, geom: TubeGeometry, constants: PhysicsConstants, k: int, eta=0.0):
    """Symmetrised mode-k block of (hbar^2/2m)(-Laplace-Beltrami + xi R) + V0."""
    prof = geom.profile
    _, xm = grid.gradient()
    b, _, b2, _ = prof.derivatives(grid.x, eta)
    S = symmetric_operator(grid, b, prof.b(xm, eta))
    R = -2.0 * b2 / b
    c = constants.hbar**2 / (2 * constants.mass)
    diag = c * (k * k / b**2 + constants.xi * R) + constants.v0(grid.x)
    return (c * S + sparse.diags(diag)).tocsr()


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)


def _snap_steps(steps, every):
    return set(range(0, steps + 1, every)) | {steps} if every else {steps}


def evolve_reduced_1d(fld: WaveField, geom: TubeGeometry, constants: PhysicsConstants, k: int | None = None,
                      dt: float = 5e-3, steps: int = 1, include_delta_v: bool = True, E_phi: float | None = None,
                      order: int = 4, snapshot_every: int = 0, strict_boundary: bool = False, eta=0.0,
                      time_dependent: bool = False):
    """Evolve a reduced mode wavefunction with V_cl (+ dV when requested).

    With ``time_dependent`` the radius is b(x, eta + t), evaluated at the
    midpoint of each step. Returns the final field, or a :class:`Trajectory`
    when ``snapshot_every`` is positive.
    """
    if fld.dims != 1:
        raise ValueError("evolve_reduced_1d needs a 1D field")
    if E_phi is None:
        E_phi = mode_energy(constants, k or 0)
    grid = Grid1D(fld.x, order)
    if time_dependent:
        stepper = ModeStepper(grid, constants.hbar,
                              lambda t: reduced_hamiltonian(grid, geom, constants, E_phi, include_delta_v, eta + t),
                              static=False)
    else:
        H = reduced_hamiltonian(grid, geom, constants, E_phi, include_delta_v, eta)
        stepper = ModeStepper(grid, constants.hbar, lambda t: H)
    psi = fld.values.copy()
    traj = Trajectory()
    snaps = _snap_steps(steps, snapshot_every)
    for n in range(steps + 1):
        if snapshot_every and n in snaps:
            traj.times.append(n * dt)
            traj.fields.append(fld.with_values(psi))
        if n == steps:
            break
        psi = stepper.step(psi, n * dt, dt)
    _boundary_check(psi, strict_boundary)
    return traj if snapshot_every else fld.with_values(psi)


def _mode_numbers(n_phi):
    return np.fft.fftfreq(n_phi, 1.0 / n_phi).astype(int)


def _evolve_covariant(fld, geom, constants, dt, steps, order, snapshot_every, strict_boundary, compensation, t0,
                      time_dependent):
    if fld.dims != 2:
        raise ValueError("covariant evolution needs a 2D field")
    grid = Grid1D(fld.x, order)
    prof = geom.profile
    n_phi = fld.phi.size
    if not np.allclose(fld.phi, phi_grid(n_phi, geom.phi_period)):
        raise ValueError("phi grid does not match the geometry")
    ks = _mode_numbers(n_phi)
    sqrt_w0 = np.sqrt(prof.b(fld.x, t0) ** geom.d)
    coeffs = np.fft.fft(fld.values, axis=1) / n_phi  # Psi = sum_k c_k e^{ik phi}
    chi = coeffs * sqrt_w0[:, None]
    active = [j for j in range(n_phi) if np.any(chi[:, j] != 0)]
    steppers = {}
    for j in active:
        k = int(ks[j])
        if time_dependent:
            ham = (lambda kk: (lambda t: covariant_mode_hamiltonian(grid, geom, constants, kk, t0 + t)))(k)
        else:
            Hk = covariant_mode_hamiltonian(grid, geom, constants, k, t0)
            ham = (lambda H: (lambda t: H))(Hk)
        skew = None
        if time_dependent and not compensation:
            # dropping the compensation term leaves +(i hbar d/2) d_t ln b in the chi equation
            skew = lambda t: 0.5j * constants.hbar * geom.d * prof.dlnb_deta(grid.x, t0 + t)
        steppers[j] = ModeStepper(grid, constants.hbar, ham, skew=skew, static=not time_dependent)

    def rebuild(chi_now, t):
        w = np.sqrt(prof.b(fld.x, t0 + t) ** geom.d)
        vals = np.fft.ifft(chi_now / w[:, None], axis=1) * n_phi
        return WaveField(fld.x, vals, phi=fld.phi, norm_convention="covariant", weight=w**2,
                         meta=dict(fld.meta, t=t0 + t))

    traj = Trajectory()
    snaps = _snap_steps(steps, snapshot_every)
    for n in range(steps + 1):
        if snapshot_every and n in snaps:
            traj.times.append(t0 + n * dt)
            traj.fields.append(rebuild(chi, n * dt))
        if n == steps:
            break
        for j in active:
            chi[:, j] = steppers[j].step(chi[:, j], n * dt, dt)
    out = rebuild(chi, steps * dt)
    _boundary_check(out.values, strict_boundary)
    return traj if snapshot_every else out


def evolve_full_2d(fld: WaveField, geom: TubeGeometry, constants: PhysicsConstants, dt: float, steps: int,
                   order: int = 4, snapshot_every: int = 0, strict_boundary: bool = False):
    """Covariant evolution on the (x, phi) grid with a static radius."""
    return _evolve_covariant(fld, geom, constants, dt, steps, order, snapshot_every, strict_boundary,
                             compensation=True, t0=0.0, time_dependent=False)


def evolve_time_dependent(fld: WaveField, geom: TubeGeometry, constants: PhysicsConstants, dt: float, steps: int,
                          order: int = 4, compensation: bool = True, t0: float = 0.0, snapshot_every: int = 0,
                          strict_boundary: bool = False):
    """Covariant evolution with b(x, t) (t enters through the profile's eta argument).

    With ``compensation=False`` the -(i hbar d/2) d_t ln b term is dropped,
    which breaks norm conservation at first order in dt per unit time.
    """
    return _evolve_covariant(fld, geom, constants, dt, steps, order, snapshot_every, strict_boundary,
                             compensation=compensation, t0=t0, time_dependent=True)


def covariant_norm(fld: WaveField) -> float:
    return fld.norm()


def gaussian_packet(x, sigma: float = 1.0, x0: float = 0.0, p0: float = 0.0, hbar: float = 1.0):
    """L2-normalised Gaussian exp(-(x-x0)^2/(4 sigma^2) + i p0 x / hbar)."""
    x = np.asarray(x, float)
    g = np.exp(-((x - x0) ** 2) / (4 * sigma**2) + 1j * p0 * x / hbar)
    return g / math.sqrt(np.sum(np.abs(g) ** 2) * (x[1] - x[0]))


def free_packet(x, t, sigma=1.0, x0=0.0, p0=0.0, hbar=1.0, mass=1.0):
    """Analytic free evolution of :func:`gaussian_packet` (continuum normalisation)."""
    x = np.asarray(x, float)
    st = sigma * (1 + 1j * hbar * t / (2 * mass * sigma**2))
    pref = (2 * math.pi) ** -0.25 / np.sqrt(st)
    xc = x - x0 - p0 * t / mass
    return pref * np.exp(-xc**2 / (4 * sigma * st) + 1j * p0 * (x - x0) / hbar - 1j * p0**2 * t / (2 * mass * hbar)
                         + 1j * p0 * x0 / hbar)


def mode_state_2d(geom: TubeGeometry, x, n_phi: int, k: int, psi, eta=0.0) -> WaveField:
    """Psi(x, phi) = Phi_k(phi) b^{-d/2} psi(x)."""
    phis = phi_grid(n_phi, geom.phi_period)
    b = geom.profile.b(x, eta)
    vals = np.outer(np.asarray(psi) * b ** (-geom.d / 2.0), np.exp(1j * k * phis) / math.sqrt(geom.phi_period))
    return field_2d(geom, x, n_phi, vals, eta)


# -- observables ---------------------------------------------------------------

def expectation_x(fld: WaveField) -> float:
    p = fld.density()
    if fld.dims == 2:
        p = p.sum(axis=1)
    return float(np.sum(fld.x * p) / np.sum(p))


def _x_density(fld):
    p = fld.density()
    if fld.dims == 2:
        p = p.sum(axis=1)
    return p / p.sum()


def ehrenfest_residual(traj: Trajectory, geom: TubeGeometry, constants: PhysicsConstants, E_phi: float,
                       include_delta_v: bool = True):
    """r(t) = m d^2<x>/dt^2 + <dV_cl/dx (+ d dV/dx)> on interior snapshots.

    Snapshots must be uniformly spaced; second differences use neighbours.
    Returns (times, residuals).
    """
    if len(traj.fields) < 3:
        raise ValueError("need at least three snapshots for second differences")
    t = np.asarray(traj.times)
    h = np.diff(t)
    if not np.allclose(h, h[0], rtol=1e-9):
        raise ValueError("snapshots must be uniformly spaced")
    xs = np.array([expectation_x(f) for f in traj.fields])
    acc = (xs[2:] - 2 * xs[1:-1] + xs[:-2]) / h[0] ** 2
    forces = []
    for f in traj.fields[1:-1]:
        p = _x_density(f)
        F = d_classical_potential_dx(geom, constants, f.x, E_phi)
        if include_delta_v:
            F = F + d_delta_v_dx(geom, constants, f.x)
        forces.append(float(np.sum(p * F)))
    return t[1:-1], constants.mass * acc + np.array(forces)
