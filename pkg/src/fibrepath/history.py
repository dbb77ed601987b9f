"""History-dependent radius b(x, eta) with eta[x(t)] = int f(x) dt.

eta is carried as an extra deterministic coordinate: along a sliced path
eta_n = sum_{m<=n} eps f(x_m). Lattice sums reuse the engine in
:mod:`fibrepath.sliced`; the time-dependent case is the same code with f = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import PchipInterpolator

from .geometry import TubeGeometry
from .kernels import DiscretePath, PhysicsConstants, history_measure_factor, short_time_mode
from .pde import Grid1D, ModeStepper, reduced_hamiltonian
from .polyexpr import parse_polynomial
from .quadrature import trapezoid_weights
from .sliced import Lattice, SliceSettings, brute_force_full, reduced_brute_force

TIME_FUNCTIONAL = Polynomial([1.0])


class EtaRangeError(RuntimeError):
    """Amplitude would leave the configured eta grid."""


@dataclass(frozen=True)
class HistoryContext:
    """The integrand f(x) of the memory variable and the eta grid used by grid evolution."""

    f: Polynomial
    eta_range: tuple[float, float] = (-1.0, 1.0)
    d_eta: float = 0.01

    def __post_init__(self):
        if isinstance(self.f, str):
            object.__setattr__(self, "f", parse_polynomial(self.f))
        lo, hi = self.eta_range
        if not lo < hi:
            raise ValueError("eta_range must be increasing")
        if not self.d_eta > 0:
            raise ValueError("d_eta must be positive")

    @property
    def eta_grid(self) -> np.ndarray:
        lo, hi = self.eta_range
        n = int(round((hi - lo) / self.d_eta)) + 1
        return lo + self.d_eta * np.arange(n)

    def f_extremes(self, x_min: float, x_max: float) -> tuple[float, float]:
        """(min f, max f) on [x_min, x_max]; polynomial extrema sit at the ends or at roots of f'."""
        cands = [x_min, x_max] + [float(r.real) for r in self.f.deriv().roots()
                                  if abs(r.imag) < 1e-12 and x_min <= r.real <= x_max]
        vals = [float(self.f(c)) for c in cands]
        return min(vals), max(vals)

    def reachable(self, x_min: float, x_max: float, T: float) -> tuple[float, float]:
        lo, hi = self.f_extremes(x_min, x_max)
        return T * min(0.0, lo), T * max(0.0, hi)

    def check_covers(self, x_min: float, x_max: float, T: float):
        """Require the eta grid to contain every value reachable within time T."""
        need_lo, need_hi = self.reachable(x_min, x_max, T)
        grid = self.eta_grid
        if grid[0] > need_lo + 1e-12 or grid[-1] < need_hi - 1e-12:
            raise EtaRangeError(f"eta grid [{grid[0]}, {grid[-1]}] does not cover [{need_lo}, {need_hi}]")


def eta_of_path(path: DiscretePath, f) -> np.ndarray:
    """eta_n = sum_{m=1}^{n} eps f(x_m) for n = 0..N (eta_0 = 0)."""
    fx = np.asarray(f(path.x[1:]), float) * np.ones(path.n_slices)
    out = np.zeros(path.x.size)
    out[1:] = np.cumsum(path.eps * fx)
    return out


def history_full_brute_force(geom: TubeGeometry, ctx: HistoryContext, constants: PhysicsConstants,
                             lattice: Lattice, T: float, N: int, settings: SliceSettings | None = None):
    return brute_force_full(geom, constants, lattice, T, N, settings, f=ctx.f)


def history_reduced_brute_force(geom: TubeGeometry, ctx: HistoryContext, constants: PhysicsConstants, k: int,
                                lattice: Lattice, T: float, N: int, settings: SliceSettings | None = None):
    return reduced_brute_force(geom, constants, k, lattice, T, N, settings, f=ctx.f)


def time_dependent_full_brute_force(geom, constants, lattice, T, N, settings=None):
    """b(x, t) with t = eta: the history machinery with f = 1."""
    return brute_force_full(geom, constants, lattice, T, N, settings, f=TIME_FUNCTIONAL)


def time_dependent_reduced_brute_force(geom, constants, k, lattice, T, N, settings=None):
    return reduced_brute_force(geom, constants, k, lattice, T, N, settings, f=TIME_FUNCTIONAL)


def cancellation_deviation(geom: TubeGeometry, path: DiscretePath, f) -> float:
    """|prod_n measure ratio * prod_n exp(-(d/2) eps f(x_n) d_eta ln b(x_n, eta_n)) - 1| along a path."""
    eta = eta_of_path(path, f)
    xn, en = path.x[1:], eta[1:]
    fx = np.asarray(f(xn), float) * np.ones(xn.size)
    ratio = history_measure_factor(geom, xn, en, path.eps, fx)
    comp = np.exp(-0.5 * geom.d * path.eps * fx * geom.profile.dlnb_deta(xn, en))
    return float(abs(np.prod(ratio * comp) - 1.0))


# -- augmented (x, eta) evolution ----------------------------------------------------

def _shift_rows(u, shifts_cells, interpolate):
    """u[i, :] -> u[i, : - s_i] along eta with zero inflow; raise if amplitude leaves the grid."""
    out = np.zeros_like(u)
    n_eta = u.shape[1]
    idx = np.arange(n_eta)
    for i, s in enumerate(shifts_cells):
        row = u[i]
        if not np.any(row):
            continue
        si = int(round(s))
        if abs(s - si) < 1e-9:
            if si == 0:
                out[i] = row
                continue
            nz = np.nonzero(row)[0]
            if nz.max() + si >= n_eta or nz.min() + si < 0:
                raise EtaRangeError("eta advection leaves the grid")
            out[i, max(si, 0):n_eta + min(si, 0)] = row[max(-si, 0):n_eta - max(si, 0)]
        else:
            if not interpolate:
                raise EtaRangeError("eta shift is not a whole number of cells")
            nz = np.nonzero(np.abs(row) > 0)[0]
            if nz.max() + math.ceil(s) >= n_eta or nz.min() + math.floor(s) < 0:
                raise EtaRangeError("eta advection leaves the grid")
            src = idx - s
            re = PchipInterpolator(idx, row.real, extrapolate=False)(src)
            im = PchipInterpolator(idx, row.imag, extrapolate=False)(src)
            out[i] = np.nan_to_num(re) + 1j * np.nan_to_num(im)
    return out


@dataclass
class AugmentedState:
    x: np.ndarray
    eta: np.ndarray
    u: np.ndarray  # amplitude per (x, eta)

    def marginal(self) -> np.ndarray:
        """Reduced wavefunction: superposition over eta labels."""
        return self.u.sum(axis=1)


def initial_augmented(x, eta_grid, psi0, eta0: float = 0.0) -> AugmentedState:
    eta_grid = np.asarray(eta_grid, float)
    j = int(np.argmin(abs(eta_grid - eta0)))
    if abs(eta_grid[j] - eta0) > 1e-9 * max(1.0, abs(eta0)):
        raise EtaRangeError("initial eta is not a grid node")
    u = np.zeros((np.size(x), eta_grid.size), complex)
    u[:, j] = psi0
    return AugmentedState(np.asarray(x, float), eta_grid, u)


def augmented_grid_evolution(state: AugmentedState, geom: TubeGeometry, ctx: HistoryContext,
                             constants: PhysicsConstants, k: int, dt: float, steps: int, *, x_step: str = "cn",
                             order: int = 4, include_delta_v: bool = True, settings: SliceSettings | None = None,
                             interpolate: bool = True) -> AugmentedState:
    """Operator-split evolution of the amplitude over (x, eta).

    Each step advances x at fixed eta label and then advects eta by f(x) dt.

    ``x_step="cn"``: Crank-Nicolson with the reduced Hamiltonian at
    eta_j + f(x) dt / 2. ``x_step="kernel"``: the lattice mode kernel with
    trapezoid weights, eta_from = eta_j and eta_to = eta_j + f(x_to) dt, which
    reproduces the reduced lattice sum exactly when the eta shifts are whole
    cells.
    """
    eta = state.eta
    d_eta = float(eta[1] - eta[0])
    x = state.x
    fx = np.asarray(ctx.f(x), float) * np.ones(x.size)
    if np.max(np.abs(fx)) * dt > d_eta * (1 + 1e-9) and x_step == "cn" and interpolate:
        # keep the advection local for the interpolating shift
        raise EtaRangeError("CFL-type bound max|f| dt <= d_eta violated")
    shifts = fx * dt / d_eta
    u = state.u.copy()
    s = settings or SliceSettings(delta=0.0)
    cache = {}
    if x_step == "kernel":
        w = trapezoid_weights(x)
    elif x_step == "cn":
        grid = Grid1D(x, order)
    else:
        raise ValueError("x_step must be 'cn' or 'kernel'")
    E_k = constants.hbar**2 * k * k / (2 * constants.mass)
    for _ in range(steps):
        new = np.zeros_like(u)
        for j in np.nonzero(np.any(u != 0, axis=0))[0]:
            if j not in cache:
                if x_step == "kernel":
                    K = short_time_mode(geom, constants, k, x[:, None], x[None, :], dt, delta=s.delta,
                                        eta_to=(eta[j] + fx * dt)[:, None], eta_from=eta[j], point=s.point,
                                        include_delta_v=include_delta_v)
                    cache[j] = K * w[None, :]
                else:
                    H = reduced_hamiltonian(grid, geom, constants, E_k, include_delta_v, eta[j] + 0.5 * fx * dt)
                    cache[j] = ModeStepper(grid, constants.hbar, (lambda HH: (lambda t: HH))(H))
            if x_step == "kernel":
                new[:, j] = cache[j] @ u[:, j]
            else:
                new[:, j] = cache[j].step(u[:, j], 0.0, dt)
        u = _shift_rows(new, shifts, interpolate)
    return AugmentedState(x, eta, u)
