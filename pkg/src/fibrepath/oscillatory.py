"""Oscillatory Gaussian-type integrals over a short-time step.

Two evaluation strategies are provided:

* steepest-descent contours: the separations are rotated into the complex
  plane, dx = e^{i theta} s with theta chosen so that the quadratic part of the
  exponent becomes a real decaying Gaussian, and the integral is done with
  Gauss-Hermite nodes. The integrand must be analytic in the strip swept by
  the rotation (profiles here are entire or have poles at |Im x| >= pi/2).
* a convergence regulator eps -> eps (1 - i delta) on a real grid, followed by
  Richardson extrapolation delta -> 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .geometry import TubeGeometry, sigma_taylor, sigma_taylor_gradient
from .kernels import PhysicsConstants, full_kernel_density, regulated_eps, short_time_mode
from .quadrature import DEFAULT_DELTAS, ExtrapolationError, richardson_to_zero


def _rotation(eps_c, mass, hbar):
    """Phase e^{i theta} and scale making exp(i m s^2 e^{2 i theta} / (2 hbar eps)) = exp(-t^2)."""
    # i e^{2 i theta} / eps_c must be negative real: e^{2 i theta} = i eps_c / |eps_c|
    rot = np.sqrt(1j * eps_c / abs(eps_c))
    scale = math.sqrt(2 * hbar * abs(eps_c) / mass)
    return rot, scale


class ContourError(ValueError):
    """Rotated contour leaves the strip where the profile is analytic."""


def analytic_half_width(profile) -> float:
    """Distance from the real axis to the nearest singularity of b."""
    if profile.kind in ("tanh-step", "exp-tanh"):
        return 0.5 * math.pi * profile.parameters["width"]
    return math.inf


def _guard_strip(profile, points, margin: float = 0.8):
    limit = margin * analytic_half_width(profile)
    reach = float(np.max(np.abs(np.imag(points))))
    if reach >= limit:
        raise ContourError(f"contour reaches |Im x| = {reach:.3g} (limit {limit:.3g}); use fewer nodes")


def gauss_hermite(n: int, cutoff: float = 1e-15):
    """Gauss-Hermite nodes, dropping nodes whose weight is below ``cutoff`` times the largest."""
    t, w = hermgauss(n)
    keep = w >= cutoff * w.max()
    return t[keep], w[keep]


def apply_mode_kernel(geom: TubeGeometry, constants: PhysicsConstants, k: int, psi, x_to, eps, *, delta=0.0,
                      n_nodes: int = 40, point: str = "later", include_delta_v: bool = True):
    """(K_k psi)(x_to) = int dx K_k(x_to, x) psi(x) on a rotated contour.

    ``psi`` must accept complex arguments.
    """
    e = regulated_eps(eps, delta)
    rot, scale = _rotation(e, constants.mass, constants.hbar)
    t, w = gauss_hermite(n_nodes)
    x_to = np.asarray(x_to, float)[:, None]
    x_from = x_to - rot * scale * t[None, :]
    _guard_strip(geom.profile, x_from)
    K = short_time_mode(geom, constants, k, x_to, x_from, eps, delta=delta, point=point,
                        include_delta_v=include_delta_v)
    # undo the Gaussian weight exp(-t^2) that hermgauss includes
    integrand = K * psi(x_from) * np.exp(t * t)[None, :]
    return (integrand * w[None, :]).sum(axis=1) * rot * scale


def apply_full_kernel(geom: TubeGeometry, constants: PhysicsConstants, k: int, g, x_to, eps, *, delta=0.0,
                      n_nodes: int = 20, point: str = "later"):
    """Apply the full kernel to Psi = g(x) e^{i k phi}; returns c(x_to) with result c e^{i k phi'}.

    Both separations are rotated; the angular integral runs over the covering
    line (all windings), so the sum over sheets is implicit.
    """
    e = regulated_eps(eps, delta)
    m, hb = constants.mass, constants.hbar
    rot, scale = _rotation(e, m, hb)
    t, w = gauss_hermite(n_nodes)
    x_to = np.asarray(x_to, float)[:, None, None]
    x_from = x_to - rot * scale * t[None, :, None]
    _guard_strip(geom.profile, x_from)
    prof = geom.profile
    # radius scale for the angular Gaussian: b(x_to)
    bt = np.real(prof.b(x_to))
    u = rot * scale * t[None, None, :] / bt
    K = full_kernel_density(geom, constants, x_to, x_from, u, eps, delta=delta, point=point)
    integrand = K * prof.b(x_from) ** geom.d * g(x_from) * np.exp(-1j * k * u)
    integrand = integrand * np.exp(t * t)[None, :, None] * np.exp(t * t)[None, None, :]
    jac = (rot * scale) ** 2 / bt[:, :, 0]
    return (integrand * w[None, :, None] * w[None, None, :]).sum(axis=(1, 2)) * jac[:, 0]


@dataclass
class MomentResult:
    residual: float
    components: dict
    extrapolation_error: float
    per_delta: list


def _moment_integrals(geom, constants, x_to, eps_c, xs, us, weights):
    """Integrals Z and M^{ij} for given (complex) source points and weights."""
    m, hb = constants.mass, constants.hbar
    prof = geom.profile
    angle = us
    s = sigma_taylor(prof, x_to, xs, angle)
    gx, gphi = sigma_taylor_gradient(prof, x_to, xs, angle)
    b = prof.b(xs)
    E = np.exp(1j * m * s / (hb * eps_c)) * b * weights
    c = 1j * hb * eps_c / m
    Z = E.sum()
    Mxx = (E * (gx * gx - c)).sum()
    Mpp = (E * (gphi * gphi / b**4 - c / b**2)).sum()
    Mxp = (E * (gx * gphi / b**2)).sum()
    return Z, {"xx": Mxx, "phiphi": Mpp, "xphi": Mxp}


def gaussian_moment_contour(geom: TubeGeometry, constants: PhysicsConstants, x, eps, *, delta=0.0,
                            n_nodes: int = 48):
    """Normalised Gaussian-moment residual max_ij |M^{ij}| / |Z| on rotated contours."""
    e = regulated_eps(eps, delta)
    rot, scale = _rotation(e, constants.mass, constants.hbar)
    t, w = gauss_hermite(n_nodes)
    bt = float(np.real(geom.profile.b(x)))
    T1, T2 = np.meshgrid(t, t, indexing="ij")
    W = np.outer(w, w) * np.exp(T1**2 + T2**2)
    xs = x - rot * scale * T1
    _guard_strip(geom.profile, xs)
    us = rot * scale * T2 / bt
    jac = (rot * scale) ** 2 / bt
    Z, M = _moment_integrals(geom, constants, x, e, xs, us, W * jac)
    comps = {key: abs(val) / abs(Z) for key, val in M.items()}
    return max(comps.values()), comps


def gaussian_moment_residual(geom: TubeGeometry, constants: PhysicsConstants, x, eps, *, deltas=DEFAULT_DELTAS,
                             half_width: float = 5.0, points_per_wavelength: float = 5.0,
                             max_points: int = 8000) -> MomentResult:
    """Regulated real-grid Gaussian-moment residual, Richardson-extrapolated to delta -> 0.

    For each delta the integrals over (dx, dphi) are done with the trapezoid
    rule on a square box whose half-width is ``half_width`` regulated decay
    lengths; the grid resolves the local oscillation wavelength at the box
    edge. Raises :class:`ExtrapolationError` when the grid would exceed
    ``max_points`` per axis.
    """
    m, hb = constants.mass, constants.hbar
    bt = float(geom.profile.b(x))
    per_delta = []
    for d in deltas:
        e = regulated_eps(eps, d)
        decay = math.sqrt(2 * hb * abs(e) ** 2 / (m * eps * d))  # |dq| where |exp| falls by e^-1
        L = half_width * decay
        k_edge = m * L / (hb * eps)
        n = int(math.ceil(2 * L * k_edge * points_per_wavelength / (2 * math.pi))) | 1
        if n > max_points:
            raise ExtrapolationError(f"regulated grid needs {n} points per axis (> {max_points})")
        s = np.linspace(-L, L, n)
        h = s[1] - s[0]
        Zs, Ms = 0.0, {"xx": 0.0, "phiphi": 0.0, "xphi": 0.0}
        us = s / bt
        for start in range(0, n, 256):
            xs = x - s[start:start + 256][:, None]
            Z, M = _moment_integrals(geom, constants, x, e, xs, us[None, :], h * h / bt)
            Zs += Z
            for key in Ms:
                Ms[key] += M[key]
        per_delta.append((Zs, Ms))
    Zext, Zerr = richardson_to_zero(deltas, np.array([p[0] for p in per_delta]))
    comps, errs = {}, []
    for key in ("xx", "phiphi", "xphi"):
        val, err = richardson_to_zero(deltas, np.array([p[1][key] for p in per_delta]))
        comps[key] = abs(val) / abs(Zext)
        errs.append(float(err) / abs(Zext))
    return MomentResult(max(comps.values()), comps, max(errs), per_delta)
