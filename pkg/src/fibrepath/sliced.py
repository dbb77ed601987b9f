"""Time-sliced propagators: grid composition and exact lattice path sums.

Lattice path sums enumerate every x-path explicitly. For each x-path the sum
over the interior fibre angles is a chain of circular convolutions (the full
kernel depends on the angle only through the difference), which is evaluated
exactly with FFTs. The result is identical to enumerating all (x, phi) paths
one by one, as :func:`brute_force_full_literal` checks on small lattices.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import TWO_PI, TubeGeometry
from .kernels import PhysicsConstants, short_time_full, short_time_mode
from .quadrature import fit_convergence_order, trapezoid_weights

DEFAULT_PATH_BUDGET = 10_000_000


class BudgetExceededError(RuntimeError):
    pass


# -- grid kernels -----------------------------------------------------------------

@dataclass
class KernelMatrix:
    """K[i, j] from x_from[j] to x_to[i]; ``weights`` are the quadrature weights on x_from."""

    x_to: np.ndarray
    x_from: np.ndarray
    K: np.ndarray
    weights: np.ndarray
    eps: complex
    slices: int = 1

    def __post_init__(self):
        self.K = np.asarray(self.K, complex)
        if self.K.shape != (np.size(self.x_to), np.size(self.x_from)):
            raise ValueError("kernel shape does not match its grids")
        if np.shape(self.weights) != (np.size(self.x_from),):
            raise ValueError("weights must live on the source grid")

    @property
    def elapsed(self):
        return self.eps * self.slices

    def apply(self, values):
        return self.K @ (self.weights * np.asarray(values))


def compose(kernel: KernelMatrix, steps: int, budget: int | None = None) -> KernelMatrix:
    """kernel^steps with quadrature weights between factors.

    Uses binary powering (a fixed sequence of products for a given ``steps``,
    so results are reproducible). ``budget`` bounds the number of matrix
    products times n^3.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if kernel.x_to.shape != kernel.x_from.shape or not np.allclose(kernel.x_to, kernel.x_from):
        raise ValueError("composition needs identical source and target grids")
    n = kernel.K.shape[0]
    n_products = (steps.bit_length() - 1) + (bin(steps).count("1") - 1)
    if budget is not None and n_products * n**3 > budget:
        raise BudgetExceededError(f"composition cost {n_products * n**3:.3g} exceeds budget {budget:.3g}")
    w = kernel.weights[None, :]
    result = None
    base = kernel.K
    remaining = steps
    while True:
        if remaining & 1:
            result = base if result is None else (base * w) @ result
        remaining >>= 1
        if not remaining:
            break
        base = (base * w) @ base
    return KernelMatrix(kernel.x_to, kernel.x_from, result, kernel.weights, kernel.eps, kernel.slices * steps)


def mode_kernel_matrix(geom: TubeGeometry, constants: PhysicsConstants, k: int, x, eps, *, delta=0.0,
                       point="later", include_delta_v=True) -> KernelMatrix:
    x = np.asarray(x, float)
    K = short_time_mode(geom, constants, k, x[:, None], x[None, :], eps, delta=delta, point=point,
                        include_delta_v=include_delta_v)
    return KernelMatrix(x, x, K, trapezoid_weights(x), eps * (1 - 1j * delta))


def reduced_path_propagator(geom: TubeGeometry, constants: PhysicsConstants, k: int, x, T: float, N: int, *,
                            delta=0.0, point="later", include_delta_v=True) -> KernelMatrix:
    """N-slice composition of the mode-k kernel on the grid ``x``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return compose(mode_kernel_matrix(geom, constants, k, x, T / N, delta=delta, point=point,
                                      include_delta_v=include_delta_v), N)


def free_kernel(x_to, x_from, t, mass=1.0, hbar=1.0):
    """Free-particle kernel in one dimension at (possibly complex) time t."""
    dx = np.asarray(x_to) - np.asarray(x_from)
    return np.sqrt(mass / (2j * math.pi * hbar * t)) * np.exp(1j * mass * dx * dx / (2 * hbar * t))


def mehler_kernel(x_to, x_from, t, omega=1.0, mass=1.0, hbar=1.0):
    """Harmonic-oscillator kernel for V = m omega^2 x^2 / 2 at (possibly complex) time t."""
    x, y = np.asarray(x_to), np.asarray(x_from)
    s = np.sin(omega * t)
    c = np.cos(omega * t)
    return np.sqrt(mass * omega / (2j * math.pi * hbar * s)) * np.exp(
        1j * mass * omega * ((x * x + y * y) * c - 2 * x * y) / (2 * hbar * s))


def flat_cylinder_kernel(x_to, phi_to, x_from, phi_from, t, radius=1.0, mass=1.0, hbar=1.0, windings=20):
    """Free propagator on R x circle(radius) via the image sum over windings."""
    dphi = np.asarray(phi_to) - np.asarray(phi_from)
    total = 0.0
    for w in range(-windings, windings + 1):
        total = total + free_kernel(radius * (dphi + TWO_PI * w), 0.0, t, mass, hbar)
    return free_kernel(x_to, x_from, t, mass, hbar) * total


@dataclass
class ModeSumResult:
    value: complex
    tail: float
    flagged: bool


def mode_sum_propagator(geom: TubeGeometry, constants: PhysicsConstants, endpoints, x, T, N, k_max, *, delta=0.0,
                        point="later", tail_tol=1e-6) -> ModeSumResult:
    """Full propagator between (x_f, phi_f) and (x_0, phi_0) as a truncated mode sum.

    The endpoints x_f and x_0 must be nodes of the grid ``x``. The tail
    estimate is the magnitude of the |k| = k_max terms.
    """
    x_f, phi_f, x_0, phi_0 = endpoints
    x = np.asarray(x, float)
    i_f = int(np.argmin(abs(x - x_f)))
    i_0 = int(np.argmin(abs(x - x_0)))
    if abs(x[i_f] - x_f) > 1e-12 or abs(x[i_0] - x_0) > 1e-12:
        raise ValueError("endpoints must be grid nodes")
    prof = geom.profile
    scale = (prof.b(x_f) * prof.b(x_0)) ** (-geom.d / 2.0) / geom.phi_period
    total, tail = 0.0, 0.0
    for k in range(-k_max, k_max + 1):
        entry = reduced_path_propagator(geom, constants, k, x, T, N, delta=delta, point=point).K[i_f, i_0]
        term = scale * np.exp(1j * k * (phi_f - phi_0)) * entry
        total += term
        if abs(k) == k_max:
            tail += abs(term)
    return ModeSumResult(complex(total), float(tail), bool(tail > tail_tol * max(abs(total), 1e-300)))


# -- lattice path sums ------------------------------------------------------------

@dataclass(frozen=True)
class Lattice:
    x_min: float
    x_max: float
    n_x: int
    n_phi: int

    def __post_init__(self):
        if self.n_x < 2 or self.n_phi < 1:
            raise ValueError("lattice needs n_x >= 2 and n_phi >= 1")
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")

    @property
    def x(self):
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def phi(self):
        return np.arange(self.n_phi) * (TWO_PI / self.n_phi)

    @property
    def x_weights(self):
        return trapezoid_weights(self.x)

    @property
    def h_phi(self):
        return TWO_PI / self.n_phi


@dataclass(frozen=True)
class PathEnumeration:
    lattice: Lattice
    N: int
    full: bool = True
    windings: int = 1

    def path_count(self) -> int:
        per = self.lattice.n_x ** (self.N - 1)
        return per * self.lattice.n_phi ** (self.N - 1) if self.full else per

    def check_budget(self, budget: int):
        count = self.path_count()
        if count > budget:
            raise BudgetExceededError(f"{count} lattice paths exceed the budget of {budget}")
        return count


@dataclass
class SliceSettings:
    """Kernel options shared by all lattice sums."""

    delta: float = 0.05
    w_max: int = 1
    point: str = "later"
    include_delta_v: bool = True
    budget: int = DEFAULT_PATH_BUDGET
    chunk: int = 20000


@dataclass
class FullLatticeResult:
    """Full lattice sums between all endpoint pairs.

    ``P[i_f, i_0, j]`` is the propagator for phi_f - phi_0 = j h_phi and
    ``modes[i_f, i_0, q]`` the exact mode components
    F_k = sqrt(b_f b_0)^d h^2 sum_{a,b} conj(Phi_k(phi_a)) P(phi_a - phi_b) Phi_k(phi_b)
    for DFT index q = k mod n_phi. In a history context b_f = b(x_f, eta_N)
    is taken path by path.
    """

    lattice: Lattice
    N: int
    P: np.ndarray
    modes: np.ndarray
    path_count: int

    def mode(self, k: int) -> np.ndarray:
        return self.modes[:, :, k % self.lattice.n_phi]


def _interior_paths(n_x, N):
    if N == 1:
        return np.zeros((1, 0), dtype=int)
    return np.array(list(itertools.product(range(n_x), repeat=N - 1)), dtype=int)


def _eta_along(x_idx_path, x, eps, f):
    """eta_n for n = 0..N along each path (rows), eta_0 = 0."""
    if f is None:
        return np.zeros(x_idx_path.shape, float)
    fx = f(x[x_idx_path[:, 1:]]) * np.ones(x_idx_path[:, 1:].shape)
    eta = np.zeros(x_idx_path.shape, float)
    eta[:, 1:] = np.cumsum(eps * fx, axis=1)
    return eta


def _path_blocks(lattice, N, chunk):
    """Yield arrays of full index paths (i_0, interior..., i_f) in fixed order."""
    interior = _interior_paths(lattice.n_x, N)
    n_int = interior.shape[0]
    for i_f in range(lattice.n_x):
        for i_0 in range(lattice.n_x):
            for start in range(0, n_int, chunk):
                block = interior[start:start + chunk]
                paths = np.empty((block.shape[0], N + 1), dtype=int)
                paths[:, 0] = i_0
                paths[:, 1:N] = block
                paths[:, N] = i_f
                yield i_f, i_0, paths


def brute_force_full(geom: TubeGeometry, constants: PhysicsConstants, lattice: Lattice, T: float, N: int,
                     settings: SliceSettings | None = None, f=None) -> FullLatticeResult:
    """Exact lattice sum of the N-slice full propagator between all endpoint pairs.

    Interior points carry the weight w_x b(x_n, eta_n)^d h_phi. ``f`` switches
    on the history context: eta_n = sum_{m<=n} eps f(x_m), b -> b(x, eta) and the
    compensation rate f(x_n) d_eta ln b(x_n, eta_n) enters each slice. A static
    run uses ``f=None``; the time-dependent case is ``f = 1``.
    """
    s = settings or SliceSettings()
    if N < 1:
        raise ValueError("N must be >= 1")
    count = PathEnumeration(lattice, N, full=True).check_budget(s.budget)
    eps = T / N
    x, w = lattice.x, lattice.x_weights
    phis = lattice.phi
    h = lattice.h_phi
    prof = geom.profile
    n_x, n_phi = lattice.n_x, lattice.n_phi
    P_hat = np.zeros((n_x, n_x, n_phi), complex)
    F = np.zeros((n_x, n_x, n_phi), complex)
    for i_f, i_0, paths in _path_blocks(lattice, N, s.chunk):
        xs = x[paths]
        eta = _eta_along(paths, x, eps, f)
        prod = np.ones((paths.shape[0], n_phi), complex)
        for n in range(1, N + 1):
            rate = 0.0
            if f is not None:
                rate = ((f(xs[:, n]) * np.ones(xs.shape[0])) * prof.dlnb_deta(xs[:, n], eta[:, n]))[:, None]
            Kn = short_time_full(geom, constants, xs[:, n][:, None], phis[None, :], xs[:, n - 1][:, None], 0.0,
                                 eps, w_max=s.w_max, delta=s.delta, eta_to=eta[:, n][:, None],
                                 eta_from=eta[:, n - 1][:, None], dlnb_dt=rate, point=s.point)
            # circular convolution over the interior angle becomes a product of DFTs
            prod *= h * np.fft.fft(Kn, axis=1)
        bvals = prof.b(xs, eta) ** geom.d
        meas = np.prod(w[paths[:, 1:N]] * bvals[:, 1:N], axis=1)
        P_hat[i_f, i_0] += np.sum(prod * meas[:, None], axis=0)
        F[i_f, i_0] += np.sum(prod * (meas * np.sqrt(bvals[:, 0] * bvals[:, N]))[:, None], axis=0)
    # P_hat[q] = h sum_j P_j exp(-2 pi i q j / n_phi)
    P = np.fft.ifft(P_hat, axis=2) / h
    return FullLatticeResult(lattice, N, P, F, count)


def reduced_brute_force(geom: TubeGeometry, constants: PhysicsConstants, k: int, lattice: Lattice, T: float, N: int,
                        settings: SliceSettings | None = None, f=None) -> np.ndarray:
    """Exact lattice sum of the N-slice mode-k reduced propagator, R[i_f, i_0].

    With ``f`` the kernels use b(x_n, eta_n) with eta accumulated along each path.
    """
    s = settings or SliceSettings()
    PathEnumeration(lattice, N, full=False).check_budget(s.budget)
    eps = T / N
    x, w = lattice.x, lattice.x_weights
    R = np.zeros((lattice.n_x, lattice.n_x), complex)
    for i_f, i_0, paths in _path_blocks(lattice, N, s.chunk):
        xs = x[paths]
        eta = _eta_along(paths, x, eps, f)
        prod = np.ones(paths.shape[0], complex)
        for n in range(1, N + 1):
            prod *= short_time_mode(geom, constants, k, xs[:, n], xs[:, n - 1], eps, delta=s.delta,
                                    eta_to=eta[:, n], eta_from=eta[:, n - 1], point=s.point,
                                    include_delta_v=s.include_delta_v)
        meas = np.prod(w[paths[:, 1:N]], axis=1)
        R[i_f, i_0] += np.sum(prod * meas)
    return R


def discrete_mode_kernel(geom: TubeGeometry, constants: PhysicsConstants, q: int, lattice: Lattice, eps, *,
                         settings: SliceSettings | None = None) -> np.ndarray:
    """Static lattice mode kernel sqrt(b' b)^d h sum_j K_full(phi_j) exp(-2 pi i q j / n_phi)."""
    s = settings or SliceSettings()
    x, phis = lattice.x, lattice.phi
    K = short_time_full(geom, constants, x[:, None, None], phis[None, None, :], x[None, :, None], 0.0, eps,
                        w_max=s.w_max, delta=s.delta, point=s.point)
    Kq = lattice.h_phi * np.fft.fft(K, axis=2)[:, :, q % lattice.n_phi]
    b = geom.profile.b(x) ** geom.d
    return np.sqrt(np.outer(b, b)) * Kq


def brute_force_full_literal(geom: TubeGeometry, constants: PhysicsConstants, lattice: Lattice, T: float, N: int,
                             endpoints, settings: SliceSettings | None = None, f=None) -> complex:
    """Plain loop over every (x, phi) interior configuration; for small lattices only.

    ``endpoints`` = (i_f, j_f, i_0, j_0) lattice indices.
    """
    s = settings or SliceSettings()
    PathEnumeration(lattice, N, full=True).check_budget(s.budget)
    i_f, j_f, i_0, j_0 = endpoints
    eps = T / N
    x, w, phis = lattice.x, lattice.x_weights, lattice.phi
    h = lattice.h_phi
    prof = geom.profile
    total = 0.0
    sites = list(itertools.product(range(lattice.n_x), range(lattice.n_phi)))
    for interior in itertools.product(sites, repeat=N - 1):
        pts = [(i_0, j_0), *interior, (i_f, j_f)]
        eta = 0.0
        amp = 1.0
        for n in range(1, N + 1):
            (ia, ja), (ib, jb) = pts[n - 1], pts[n]
            eta_prev = eta
            rate = 0.0
            if f is not None:
                fv = float(f(x[ib]))
                eta = eta_prev + eps * fv
                rate = fv * float(prof.dlnb_deta(x[ib], eta))
            amp *= short_time_full(geom, constants, x[ib], phis[jb], x[ia], phis[ja], eps, w_max=s.w_max,
                                   delta=s.delta, eta_to=eta, eta_from=eta_prev, dlnb_dt=rate, point=s.point)
            if n < N:
                amp *= w[ib] * prof.b(x[ib], eta) ** geom.d * h
        total += amp
    return complex(total)


def band_limited_discrepancy(F: np.ndarray, R_by_k: dict, n_phi: int) -> tuple[float, dict]:
    """Relative Frobenius discrepancy between projected full sums and reduced sums over the listed modes."""
    num = den = 0.0
    per = {}
    for k, R in R_by_k.items():
        Fk = F[:, :, k % n_phi]
        d2 = float(np.sum(np.abs(Fk - R) ** 2))
        r2 = float(np.sum(np.abs(R) ** 2))
        per[k] = math.sqrt(d2 / r2)
        num += d2
        den += r2
    return math.sqrt(num / den), per


# -- reporting ----------------------------------------------------------------------

@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)

    def add(self, N, n_x, n_phi, eps, error):
        self.rows.append({"N": N, "n_x": n_x, "n_phi": n_phi, "eps": eps, "error": error})

    def slopes(self, key="eps"):
        out = [float("nan")] * len(self.rows)
        pts = [(abs(r[key]), r["error"]) for r in self.rows if r["error"] > 0]
        if len(pts) >= 3:
            out = [fit_convergence_order(pts)] * len(self.rows)
        return out

    def write_csv(self, path, key="eps"):
        slopes = self.slopes(key)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["N", "n_x", "n_phi", "eps", "error", "slope_estimate"])
            for r, s in zip(self.rows, slopes):
                wr.writerow([r["N"], r["n_x"], r["n_phi"], f"{abs(r['eps']):.12e}", f"{r['error']:.12e}",
                             f"{s:.6f}"])
