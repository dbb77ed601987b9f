"""Pointwise formulas: potentials, capacity, short-time kernels and discrete actions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .geometry import TWO_PI, RadiusProfile, TubeGeometry, sigma_taylor
from .polyexpr import parse_polynomial

EVALUATION_POINTS = ("later", "midpoint", "bbar")

# step for central differences of a user-supplied S(x)
S_DIFF_STEP = 1e-4


@dataclass(frozen=True)
class PhysicsConstants:
    """Mass, hbar, curvature coupling xi and the scalar potential V0(x) (a polynomial)."""

    mass: float = 1.0
    hbar: float = 1.0
    xi: float = 0.0
    V0: Polynomial = field(default_factory=lambda: Polynomial([0.0]))

    def __post_init__(self):
        if not (math.isfinite(self.mass) and self.mass > 0):
            raise ValueError("mass must be finite and positive")
        if not (math.isfinite(self.hbar) and self.hbar > 0):
            raise ValueError("hbar must be finite and positive")
        if isinstance(self.V0, str):
            object.__setattr__(self, "V0", parse_polynomial(self.V0))
        elif not isinstance(self.V0, Polynomial):
            object.__setattr__(self, "V0", Polynomial(np.atleast_1d(np.asarray(self.V0, float))))

    def v0(self, x):
        return self.V0(np.asarray(x))

    def dv0(self, x):
        return self.V0.deriv()(np.asarray(x))


@dataclass(frozen=True)
class EffectivePotentialTerms:
    x: float
    V_cl: float
    delta_V: float
    E_phi: float


@dataclass
class DiscretePath:
    """Positions x_0..x_N at times n*eps (optionally with fibre angles)."""

    x: np.ndarray
    eps: float
    phi: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, float)
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.phi is not None:
            self.phi = np.asarray(self.phi, float)
            if self.phi.shape != self.x.shape:
                raise ValueError("phi and x must have the same length")

    @property
    def n_slices(self) -> int:
        return self.x.size - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.x.size) * self.eps


# -- capacity and effective potentials -----------------------------------------

@dataclass(frozen=True)
class Capacity:
    """S(x) = d ln b(x) - d ln ell, with closed-form derivatives."""

    profile: RadiusProfile
    cell_scale: float = 1.0
    d: int = 1

    def __post_init__(self):
        if not self.cell_scale > 0:
            raise ValueError("cell scale ell must be positive")

    def derivatives(self, x, eta=0.0):
        b, b1, b2, _ = self.profile.derivatives(x, eta)
        p = b1 / b
        return (self.d * np.log(b) - self.d * math.log(self.cell_scale), self.d * p, self.d * (b2 / b - p * p))

    def __call__(self, x, eta=0.0):
        return self.derivatives(x, eta)[0]


def capacity_S(geom: TubeGeometry, x, cell_scale: float = 1.0, d: int | None = None, eta=0.0):
    """Information capacity d ln b - d ln ell."""
    if not cell_scale > 0:
        raise ValueError("cell scale ell must be positive")
    d = geom.d if d is None else d
    return d * np.log(geom.profile.b(x, eta)) - d * math.log(cell_scale)


def _dv_coefficients(constants: PhysicsConstants, d: int):
    pre = constants.hbar**2 * d / (2.0 * constants.mass)
    xi = constants.xi
    return pre * ((d - 2) / 4.0 + xi * (1 - d)), pre * (1 - 4 * xi) / 2.0


def delta_v_eff_from_b(geom: TubeGeometry | RadiusProfile, constants: PhysicsConstants, x, d: int | None = None,
                       eta=0.0):
    """Quantum correction in terms of b'/b and b''/b (closed-form derivatives)."""
    profile = geom.profile if isinstance(geom, TubeGeometry) else geom
    if d is None:
        d = geom.d if isinstance(geom, TubeGeometry) else 1
    b, b1, b2, _ = profile.derivatives(x, eta)
    A, B = _dv_coefficients(constants, d)
    return A * (b1 / b) ** 2 + B * (b2 / b)


def d_delta_v_dx(geom: TubeGeometry | RadiusProfile, constants: PhysicsConstants, x, d: int | None = None, eta=0.0):
    """x-derivative of the quantum correction (closed form, uses b''')."""
    profile = geom.profile if isinstance(geom, TubeGeometry) else geom
    if d is None:
        d = geom.d if isinstance(geom, TubeGeometry) else 1
    b, b1, b2, b3 = profile.derivatives(x, eta)
    A, B = _dv_coefficients(constants, d)
    p, q = b1 / b, b2 / b
    return 2 * A * p * (q - p * p) + B * (b3 / b - p * q)


def delta_v_eff_from_S(S, constants: PhysicsConstants, x, d: int, eta=0.0):
    """Quantum correction in terms of S' and S''.

    ``S`` is either an object with ``derivatives(x, eta) -> (S, S', S'')``
    (closed form, e.g. :class:`Capacity`) or a plain callable of x, which is
    then differentiated by central differences with step ``S_DIFF_STEP``.
    """
    if d < 1:
        raise ValueError("d must be a positive integer")
    if hasattr(S, "derivatives"):
        _, s1, s2 = S.derivatives(x, eta)
    else:
        x = np.asarray(x, float)
        h = S_DIFF_STEP
        sp, s0, sm = S(x + h), S(x), S(x - h)
        s1 = (sp - sm) / (2 * h)
        s2 = (sp - 2 * s0 + sm) / (h * h)
    xi = constants.xi
    return constants.hbar**2 / (8 * constants.mass) * ((1 - 4 * xi * (d + 1) / d) * s1 * s1 + 2 * (1 - 4 * xi) * s2)


def classical_effective_potential(geom: TubeGeometry | RadiusProfile, constants: PhysicsConstants, x, E_phi,
                                  eta=0.0):
    """V0(x) + E_phi / b(x)^2."""
    profile = geom.profile if isinstance(geom, TubeGeometry) else geom
    return constants.v0(x) + E_phi / profile.b(x, eta) ** 2


def d_classical_potential_dx(geom, constants, x, E_phi, eta=0.0):
    profile = geom.profile if isinstance(geom, TubeGeometry) else geom
    b, b1, _, _ = profile.derivatives(x, eta)
    return constants.dv0(x) - 2 * E_phi * b1 / b**3


def effective_terms(geom, constants, x, E_phi, eta=0.0) -> EffectivePotentialTerms:
    return EffectivePotentialTerms(
        x=float(x),
        V_cl=float(classical_effective_potential(geom, constants, x, E_phi, eta)),
        delta_V=float(delta_v_eff_from_b(geom, constants, x, eta=eta)),
        E_phi=float(E_phi),
    )


def mode_energy(constants: PhysicsConstants, k: int) -> float:
    return constants.hbar**2 * k * k / (2.0 * constants.mass)


# -- short-time kernels ---------------------------------------------------------

def regulated_eps(eps, delta=0.0):
    """eps -> eps (1 - i delta); delta = 0 leaves eps unchanged (possibly complex)."""
    if np.real(eps) <= 0:
        raise ValueError("eps must have positive real part")
    return eps * (1 - 1j * delta) if delta else eps


def _eval_points(point, x_to, x_from, eta_to, eta_from):
    if point == "midpoint":
        return 0.5 * (x_to + x_from), 0.5 * (eta_to + eta_from)
    if point in ("later", "bbar"):
        return x_to, eta_to
    raise ValueError(f"evaluation point must be one of {EVALUATION_POINTS}")


def full_kernel_density(geom: TubeGeometry, constants: PhysicsConstants, x_to, x_from, angle, eps, *, delta=0.0,
                        eta_to=0.0, eta_from=None, dlnb_dt=0.0, point: str = "later", sigma: Callable | None = None):
    """Single-sheet full kernel for an unreduced angular separation (complex arguments allowed).

    The radius pairing in sigma is b(x_to, eta_from) b(x_from, eta_from), both
    radii at the earlier slice; ``dlnb_dt`` is the rate of ln b along the path at
    the later point and carries the compensation term.
    """
    e = regulated_eps(eps, delta)
    m, hb = constants.mass, constants.hbar
    prof = geom.profile
    if eta_from is None:
        eta_from = eta_to
    x_to, x_from = np.asarray(x_to), np.asarray(x_from)
    if sigma is None:
        bbar_sq = prof.b(x_to, eta_from) * prof.b(x_from, eta_from)
        s = sigma_taylor(prof, x_to, x_from, angle, eta_from, bbar_sq)
    else:
        s = sigma(x_to, x_from, angle)
    xe, ee = _eval_points(point, x_to, x_from, eta_to, eta_from)
    b, _, b2, _ = prof.derivatives(xe, ee)
    R = -2.0 * b2 / b
    bracket = hb**2 / (2 * m) * (constants.xi - 1.0 / 3.0) * R + constants.v0(xe) - 0.5j * hb * geom.d * dlnb_dt
    pref = (m / (2j * math.pi * hb * e)) ** ((geom.d + 1) / 2.0)
    return pref * np.exp(1j * m * s / (hb * e) - 1j * e / hb * bracket)


def short_time_full(geom: TubeGeometry, constants: PhysicsConstants, x_to, phi_to, x_from, phi_from, eps, *,
                    w_max: int = 2, delta: float = 0.0, eta_to=0.0, eta_from=None, dlnb_dt=0.0,
                    point: str = "later", sigma: Callable | None = None):
    """Short-time kernel of the full covariant problem on the tube (D = 2).

    The angular separation is reduced to [-pi, pi) and windings |w| <= w_max
    are summed coherently. ``sigma`` may replace the Taylor world function; it
    is called as ``sigma(x_to, x_from, angle)``.
    """
    du = np.asarray(phi_to) - np.asarray(phi_from)
    du = np.mod(du + math.pi, TWO_PI) - math.pi
    total = 0.0
    for w in range(-w_max, w_max + 1):
        total = total + full_kernel_density(geom, constants, x_to, x_from, du + TWO_PI * w, eps, delta=delta,
                                            eta_to=eta_to, eta_from=eta_from, dlnb_dt=dlnb_dt, point=point,
                                            sigma=sigma)
    return total


def short_time_mode(geom: TubeGeometry, constants: PhysicsConstants, k: int, x_to, x_from, eps, *, delta=0.0,
                    eta_to=0.0, eta_from=None, point: str = "later", include_delta_v: bool = True):
    """Mode-k short-time kernel of the reduced problem.

    ``point`` selects where b, V0 and the quantum correction are evaluated:
    ``later`` (x_to), ``midpoint``, or ``bbar`` (E_phi / (b(x_to) b(x_from)),
    potentials at x_to).
    """
    e = regulated_eps(eps, delta)
    m, hb = constants.mass, constants.hbar
    prof = geom.profile
    if eta_from is None:
        eta_from = eta_to
    x_to, x_from = np.asarray(x_to), np.asarray(x_from)
    xe, ee = _eval_points(point, x_to, x_from, eta_to, eta_from)
    if point == "bbar":
        b_sq = prof.b(x_to, eta_to) * prof.b(x_from, eta_from)
    else:
        b_sq = prof.b(xe, ee) ** 2
    V = constants.v0(xe) + mode_energy(constants, k) / b_sq
    if include_delta_v:
        V = V + delta_v_eff_from_b(geom, constants, xe, eta=ee)
    dx = x_to - x_from
    return np.sqrt(m / (2j * math.pi * hb * e)) * np.exp(1j * m * dx * dx / (2 * hb * e) - 1j * e / hb * V)


def history_measure_factor(geom: TubeGeometry, x, eta, eps, f_value, d: int | None = None):
    """(b(x, eta) / b(x, eta - eps f))^{d/2}."""
    d = geom.d if d is None else d
    prof = geom.profile
    return (prof.b(x, eta) / prof.b(x, eta - eps * f_value)) ** (d / 2.0)


def semiclassical_action(path: DiscretePath, geom: TubeGeometry, constants: PhysicsConstants, E_phi: float = 0.0,
                         include_delta_v: bool = True, eta=None, rule: str = "later") -> float:
    """Discrete reduced action sum_n eps [m/2 ((x_n - x_{n-1})/eps)^2 - V(x_n)].

    ``rule="trapezoid"`` averages V over both ends of each slice, which makes
    the sum exactly invariant under time reversal of the path. ``eta``
    optionally gives eta_n for n = 0..N (history context).
    """
    if path.n_slices < 1:
        raise ValueError("path needs at least one slice")
    if rule not in ("later", "trapezoid"):
        raise ValueError("rule must be 'later' or 'trapezoid'")
    eps = path.eps
    en = np.zeros_like(path.x) if eta is None else np.asarray(eta, float)
    V = classical_effective_potential(geom, constants, path.x, E_phi, en)
    if include_delta_v:
        V = V + delta_v_eff_from_b(geom, constants, path.x, eta=en)
    V_slice = V[1:] if rule == "later" else 0.5 * (V[1:] + V[:-1])
    kin = 0.5 * constants.mass * (np.diff(path.x) / eps) ** 2
    return float(np.sum(eps * (kin - V_slice)))
