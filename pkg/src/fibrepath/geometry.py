"""Curved tube geometry ds^2 = dx^2 + b(x)^2 dphi^2.

Radius profiles with closed-form derivatives, scalar curvature, and Synge's
world function evaluated two ways: a fourth-order Taylor polynomial and a
geodesic boundary-value solve (shooting on the initial velocity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.integrate import solve_ivp

TWO_PI = 2.0 * math.pi

PROFILE_KINDS = ("constant", "exponential", "tanh-step", "exp-tanh", "gaussian-bump")

_DEFAULTS = {
    "constant": {"b": 1.0},
    "exponential": {"b0": 1.0, "lambda": 1.0, "center": 0.0},
    "tanh-step": {"b0": 1.0, "amp": 0.1, "width": 1.0, "center": 0.0},
    "exp-tanh": {"b0": 1.0, "amp": 0.3, "width": 1.0, "center": 0.0},
    "gaussian-bump": {"b0": 1.0, "amp": 0.2, "width": 1.0, "center": 0.0},
}

_ALIASES = {
    "const": "constant",
    "exp": "exponential",
    "tanh": "tanh-step",
    "exptanh": "exp-tanh",
    "gauss": "gaussian-bump",
    "gaussian": "gaussian-bump",
}


class DomainError(ValueError):
    """Point outside the configured x-domain."""


class GeodesicError(RuntimeError):
    """Shooting failed to produce a geodesic meeting the endpoint tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def _tanh_derivs(y):
    t = np.tanh(y)
    s = 1.0 - t * t
    return t, s, -2.0 * t * s, -2.0 * s * (1.0 - 3.0 * t * t)


@dataclass(frozen=True)
class RadiusProfile:
    """Fibre radius b(x) [optionally b(x, eta)] with closed-form derivatives.

    ``history_coupling`` (mu) and ``history_curvature`` (nu) give the
    dependence on the history/time variable eta through
    ``ln b(x, eta) = ln b(x) + mu*eta + nu*eta**2/2``.
    """

    kind: str
    parameters: Mapping[str, float] = field(default_factory=dict)
    history_coupling: float | None = None
    history_curvature: float = 0.0

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}; expected one of {PROFILE_KINDS}")
        params = dict(_DEFAULTS[kind])
        if kind == "exponential" and "lam" in self.parameters:
            params["lambda"] = float(self.parameters["lam"])
        for key, val in self.parameters.items():
            if key == "lam" and kind == "exponential":
                continue
            if key not in params:
                raise ValueError(f"profile {kind!r} has no parameter {key!r} (allowed: {sorted(params)})")
            params[key] = float(val)
        if kind == "constant" and params["b"] <= 0:
            raise ValueError("constant profile needs b > 0")
        if kind != "constant" and params["b0"] <= 0:
            raise ValueError("profile needs b0 > 0")
        if kind == "tanh-step" and abs(params["amp"]) >= 1:
            raise ValueError("tanh-step needs |amp| < 1 to keep b > 0")
        if kind == "gaussian-bump" and params["amp"] <= -1:
            raise ValueError("gaussian-bump needs amp > -1 to keep b > 0")
        if kind in ("tanh-step", "exp-tanh", "gaussian-bump") and params["width"] <= 0:
            raise ValueError("profile width must be positive")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "parameters", params)

    # -- static part ---------------------------------------------------------
    def _static(self, x):
        """Return (b, b', b'', b''') of the eta-independent radius."""
        p = self.parameters
        x = np.asarray(x)
        if self.kind == "constant":
            b = np.full_like(x, p["b"], dtype=np.result_type(x, float))
            z = np.zeros_like(b)
            return b, z, z, z
        if self.kind == "exponential":
            lam = p["lambda"]
            b = p["b0"] * np.exp(lam * (x - p["center"]))
            return b, lam * b, lam**2 * b, lam**3 * b
        w = p["width"]
        y = (x - p["center"]) / w
        if self.kind == "tanh-step":
            t, t1, t2, t3 = _tanh_derivs(y)
            a = p["amp"] * p["b0"]
            return p["b0"] + a * t, a * t1 / w, a * t2 / w**2, a * t3 / w**3
        if self.kind == "exp-tanh":
            t, t1, t2, t3 = _tanh_derivs(y)
            a = p["amp"]
            s1, s2, s3 = a * t1 / w, a * t2 / w**2, a * t3 / w**3
            b = p["b0"] * np.exp(a * t)
            return b, b * s1, b * (s2 + s1**2), b * (s3 + 3 * s1 * s2 + s1**3)
        # gaussian-bump
        g = np.exp(-0.5 * y * y)
        a = p["amp"] * p["b0"]
        return (
            p["b0"] + a * g,
            a * (-y * g) / w,
            a * (y * y - 1.0) * g / w**2,
            a * (3.0 * y - y**3) * g / w**3,
        )

    def _eta_factor(self, eta):
        if not self.history_coupling and not self.history_curvature:
            return 1.0
        mu = self.history_coupling or 0.0
        eta = np.asarray(eta)
        return np.exp(mu * eta + 0.5 * self.history_curvature * eta * eta)

    @property
    def is_history_dependent(self) -> bool:
        return bool(self.history_coupling) or bool(self.history_curvature)

    def derivatives(self, x, eta=0.0):
        """(b, b_x, b_xx, b_xxx) at (x, eta)."""
        f = self._eta_factor(eta)
        b, b1, b2, b3 = self._static(x)
        return b * f, b1 * f, b2 * f, b3 * f

    def b(self, x, eta=0.0):
        return self._static(x)[0] * self._eta_factor(eta)

    def db(self, x, eta=0.0):
        return self._static(x)[1] * self._eta_factor(eta)

    def d2b(self, x, eta=0.0):
        return self._static(x)[2] * self._eta_factor(eta)

    def d3b(self, x, eta=0.0):
        return self._static(x)[3] * self._eta_factor(eta)

    def dlnb_deta(self, x, eta=0.0):
        """Partial derivative of ln b with respect to eta (x-independent here)."""
        mu = self.history_coupling or 0.0
        return np.zeros_like(np.asarray(x, dtype=float)) + mu + self.history_curvature * np.asarray(eta)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "parameters": dict(self.parameters)}
        if self.history_coupling is not None:
            out["history_coupling"] = self.history_coupling
        if self.history_curvature:
            out["history_curvature"] = self.history_curvature
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "RadiusProfile":
        return cls(
            kind=data["kind"],
            parameters=dict(data.get("parameters", {})),
            history_coupling=data.get("history_coupling"),
            history_curvature=float(data.get("history_curvature", 0.0)),
        )

    @classmethod
    def parse(cls, text: str) -> "RadiusProfile":
        """Parse the compact CLI form ``kind:key=val,key=val``.

        ``mu`` and ``nu`` keys set the history coupling and curvature.
        """
        kind, _, rest = text.partition(":")
        params, mu, nu = {}, None, 0.0
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, val = item.partition("=")
            if not eq:
                raise ValueError(f"bad profile parameter {item!r}; expected key=value")
            key = key.strip()
            if key == "mu":
                mu = float(val)
            elif key == "nu":
                nu = float(val)
            else:
                params[key] = float(val)
        return cls(kind.strip(), params, history_coupling=mu, history_curvature=nu)


@dataclass(frozen=True)
class TubeGeometry:
    """Metric bundle for the d=1 tube; x-domain is a finite interval per experiment."""

    profile: RadiusProfile
    d: int = 1
    phi_period: float = TWO_PI
    x_domain: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("fibre dimension d must be a positive integer")
        lo, hi = self.x_domain
        if not lo < hi:
            raise ValueError("x_domain must satisfy x_min < x_max")

    def check_domain(self, x):
        xr = np.real(np.asarray(x))
        lo, hi = self.x_domain
        if np.any(xr < lo) or np.any(xr > hi) or np.any(~np.isfinite(xr)):
            raise DomainError(f"x outside domain [{lo}, {hi}]")

    def b(self, x, eta=0.0):
        return self.profile.b(x, eta)

    def metric(self, x, eta=0.0):
        """(g_xx, g_phiphi) components."""
        b = self.profile.b(x, eta)
        return np.ones_like(b), b * b

    def sqrt_g(self, x, eta=0.0):
        return self.profile.b(x, eta) ** self.d


@dataclass(frozen=True)
class WorldPointPair:
    """Two tube points; the fibre separation used is delta_phi + 2*pi*winding."""

    x: float
    x_prime: float
    delta_phi: float
    winding: int = 0

    @property
    def effective_angle(self) -> float:
        return self.delta_phi + TWO_PI * self.winding

    def reduced(self) -> "WorldPointPair":
        """Same geometric pair with delta_phi in [-pi, pi) and the winding adjusted."""
        shift = math.floor((self.delta_phi + math.pi) / TWO_PI)
        return WorldPointPair(self.x, self.x_prime, self.delta_phi - TWO_PI * shift, self.winding + shift)

    def swapped(self) -> "WorldPointPair":
        return WorldPointPair(self.x_prime, self.x, -self.delta_phi, -self.winding)


def scalar_curvature(geom: TubeGeometry, x, eta=0.0):
    """R = -2 b''/b for the d=1 tube."""
    geom.check_domain(x)
    b, _, b2, _ = geom.profile.derivatives(x, eta)
    return -2.0 * b2 / b


def sigma_taylor(profile: RadiusProfile, x_to, x_from, angle, eta=0.0, bbar_sq=None):
    """Vectorised fourth-order world function.

    The quartic coefficients are evaluated at the midpoint so the result is
    symmetric under exchange of the two points. ``bbar_sq`` overrides the
    default radius pairing b(x_to, eta) b(x_from, eta).
    """
    x_to = np.asarray(x_to)
    x_from = np.asarray(x_from)
    dx = x_to - x_from
    if bbar_sq is None:
        bbar_sq = profile.b(x_to, eta) * profile.b(x_from, eta)
    bm, b1m, b2m, _ = profile.derivatives(0.5 * (x_to + x_from), eta)
    u2 = np.asarray(angle) ** 2
    dx2 = dx * dx
    two_sigma = dx2 + bbar_sq * u2 - (bm * b2m / 6.0) * dx2 * u2 - ((bm * b1m) ** 2 / 12.0) * u2 * u2
    return 0.5 * two_sigma


def world_function_taylor(geom: TubeGeometry, pair: WorldPointPair, bbar_sq=None, eta=0.0) -> float:
    """Taylor-expanded world function sigma(q', q), valid for small separations."""
    if geom.d != 1:
        raise ValueError("world_function_taylor is implemented for d = 1")
    geom.check_domain([pair.x, pair.x_prime])
    return float(sigma_taylor(geom.profile, pair.x_prime, pair.x, pair.effective_angle, eta, bbar_sq))


# -- geodesic boundary-value solver --------------------------------------------

@dataclass
class GeodesicSolution:
    sigma: float
    velocity: np.ndarray  # initial (dx/dt, dphi/dt) for affine t in [0, 1]
    residual: float
    iterations: int


def _geodesic_rhs(profile, eta):
    def rhs(_t, y):
        x, _phi, vx, vphi = y[:4]
        b, b1, b2, _ = profile.derivatives(x, eta)
        ax = b * b1 * vphi * vphi
        aphi = -2.0 * (b1 / b) * vx * vphi
        out = np.empty_like(y)
        out[0], out[1], out[2], out[3] = vx, vphi, ax, aphi
        # variational equations for the 4x2 sensitivity block d(state)/d(v0)
        J = y[4:].reshape(4, 2)
        dax_dx = (b1 * b1 + b * b2) * vphi * vphi
        dax_dvphi = 2.0 * b * b1 * vphi
        daphi_dx = -2.0 * (b2 / b - (b1 / b) ** 2) * vx * vphi
        daphi_dvx = -2.0 * (b1 / b) * vphi
        daphi_dvphi = -2.0 * (b1 / b) * vx
        dJ = np.empty_like(J)
        dJ[0] = J[2]
        dJ[1] = J[3]
        dJ[2] = dax_dx * J[0] + dax_dvphi * J[3]
        dJ[3] = daphi_dx * J[0] + daphi_dvx * J[2] + daphi_dvphi * J[3]
        out[4:] = dJ.ravel()
        return out

    return rhs


def solve_geodesic(geom: TubeGeometry, pair: WorldPointPair, eta=0.0, tol=1e-9, max_iter=40) -> GeodesicSolution:
    """Shoot from (x, 0) to (x', angle) with Newton iteration on the initial velocity.

    The Jacobian comes from the variational equations integrated alongside the
    geodesic. Raises GeodesicError when the endpoint residual stays above ``tol``
    or the trajectory leaves the x-domain.
    """
    if geom.d != 1:
        raise ValueError("geodesic solver is implemented for d = 1")
    geom.check_domain([pair.x, pair.x_prime])
    profile = geom.profile
    x0, x1, target_phi = float(pair.x), float(pair.x_prime), float(pair.effective_angle)
    if x0 == x1 and target_phi == 0.0:
        return GeodesicSolution(0.0, np.zeros(2), 0.0, 0)
    rhs = _geodesic_rhs(profile, eta)
    lo, hi = geom.x_domain

    def leave_lo(_t, y):
        return y[0] - lo

    def leave_hi(_t, y):
        return hi - y[0]

    leave_lo.terminal = leave_hi.terminal = True
    events = [ev for ev, bound in ((leave_lo, lo), (leave_hi, hi)) if math.isfinite(bound)]

    def shoot(v):
        y0 = np.concatenate([[x0, 0.0, v[0], v[1]], np.array([[0, 0], [0, 0], [1, 0], [0, 1]], float).ravel()])
        sol = solve_ivp(rhs, (0.0, 1.0), y0, method="DOP853", rtol=1e-13, atol=1e-14, events=events or None)
        if sol.status == 1:
            raise GeodesicError(
                "geodesic left the x-domain",
                {"x": x0, "x_prime": x1, "angle": target_phi, "velocity": v.tolist(), "domain": (lo, hi)},
            )
        yend = sol.y[:, -1]
        res = np.array([yend[0] - x1, yend[1] - target_phi])
        jac = yend[4:].reshape(4, 2)[:2]
        return res, jac

    bbar = math.sqrt(float(profile.b(x0, eta) * profile.b(x1, eta)))
    v = np.array([x1 - x0, target_phi])
    history = []
    for it in range(1, max_iter + 1):
        res, jac = shoot(v)
        err = float(np.max(np.abs(res)))
        history.append(err)
        if err < 1e-13 * max(1.0, abs(target_phi), abs(x1 - x0)):
            break
        step = np.linalg.solve(jac, -res)
        # damp large steps relative to the flat-space guess scale
        scale = max(abs(x1 - x0), bbar * abs(target_phi), 1e-12)
        norm = math.hypot(step[0], bbar * step[1])
        if norm > 0.5 * scale and it <= 5:
            step *= 0.5 * scale / norm
        v = v + step
    else:
        res, _ = shoot(v)
        err = float(np.max(np.abs(res)))
    if not err < tol:
        raise GeodesicError(
            f"geodesic shooting did not converge (residual {err:.3e} > {tol:.1e})",
            {"x": x0, "x_prime": x1, "angle": target_phi, "residual_history": history},
        )
    b0 = float(profile.b(x0, eta))
    sigma = 0.5 * (v[0] ** 2 + (b0 * v[1]) ** 2)
    return GeodesicSolution(float(sigma), v, err, it)


def world_function_geodesic(geom: TubeGeometry, pair: WorldPointPair, eta=0.0, tol=1e-9) -> float:
    """World function from the geodesic joining the points with the pair's winding."""
    return solve_geodesic(geom, pair, eta=eta, tol=tol).sigma


def min_winding_sigma(geom: TubeGeometry, pair: WorldPointPair, w_max: int = 2, method: str = "geodesic", eta=0.0):
    """Minimise sigma over windings; returns (sigma, winding relative to pair.delta_phi).

    Ties (equal sigma within 1e-12 relative) go to the smaller |winding|, then
    to the smaller signed effective angle.
    """
    base = WorldPointPair(pair.x, pair.x_prime, pair.delta_phi, 0).reduced()
    shift = base.winding  # raw = reduced + 2*pi*shift ... winding relative to raw = w' - shift
    evaluate = world_function_geodesic if method == "geodesic" else world_function_taylor
    best = None
    for w_red in range(-w_max, w_max + 1):
        w_raw = w_red - shift
        cand = WorldPointPair(pair.x, pair.x_prime, pair.delta_phi, w_raw)
        s = evaluate(geom, cand, eta=eta)
        key = (s, abs(w_raw), cand.effective_angle)
        if best is None:
            best = key + (w_raw,)
            continue
        s_best = best[0]
        tie = abs(s - s_best) <= 1e-12 * max(abs(s), abs(s_best), 1e-300)
        if (not tie and s < s_best) or (tie and (abs(w_raw), cand.effective_angle) < (best[1], best[2])):
            best = key + (w_raw,)
    return best[0], best[3]


def geodesic_gradient_residual(geom: TubeGeometry, pair: WorldPointPair, step: float = 1e-4, eta=0.0,
                               tol: float = 1e-12) -> float:
    """Relative residual |g^ij d_i sigma d_j sigma - 2 sigma| / (2 sigma) at the source point.

    The gradient is taken by central differences of the geodesic world
    function in (x, phi) of the source point.
    """
    def sig(x, dphi):
        return world_function_geodesic(geom, WorldPointPair(x, pair.x_prime, dphi, pair.winding), eta=eta, tol=tol)

    s0 = sig(pair.x, pair.delta_phi)
    d_x = (sig(pair.x + step, pair.delta_phi) - sig(pair.x - step, pair.delta_phi)) / (2 * step)
    # phi_from enters through delta_phi = phi_to - phi_from
    d_phi = -(sig(pair.x, pair.delta_phi + step) - sig(pair.x, pair.delta_phi - step)) / (2 * step)
    b = float(geom.profile.b(pair.x, eta))
    return abs(d_x**2 + d_phi**2 / b**2 - 2 * s0) / abs(2 * s0)


def sigma_taylor_gradient(profile: RadiusProfile, x_to, x_from, angle, eta=0.0):
    """Analytic derivatives of :func:`sigma_taylor` at the source point.

    Returns (d sigma / d x_from, d sigma / d phi_from) where angle = phi_to - phi_from.
    Works for complex arguments (rotated integration contours).
    """
    x_to = np.asarray(x_to)
    x_from = np.asarray(x_from)
    u = np.asarray(angle)
    dx = x_to - x_from
    xm = 0.5 * (x_to + x_from)
    bt = profile.b(x_to, eta)
    bf, b1f, _, _ = profile.derivatives(x_from, eta)
    b, b1, b2, b3 = profile.derivatives(xm, eta)
    B1, B2 = b * b1, b * b2
    dB1, dB2 = b1 * b1 + b * b2, b1 * b2 + b * b3
    u2 = u * u
    d_x = (-dx + 0.5 * bt * b1f * u2 - (dB2 / 24.0) * dx * dx * u2 + (B2 / 6.0) * dx * u2
           - (B1 * dB1 / 24.0) * u2 * u2)
    d_u = bt * bf * u - (B2 / 6.0) * dx * dx * u - (B1 * B1 / 6.0) * u2 * u
    return d_x, -d_u
