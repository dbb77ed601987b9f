"""Declarative verification scenarios.

A scenario is a JSON document (see ``schema/experiment.schema.json``) naming a
scenario kind, the physics constants, the radius profile, the grids and a list
of checks ``{metric, op, value}``. :func:`run` executes it, writes CSV tables
and a JSON report, and evaluates every check against the recorded metrics.
Tolerances live in the scenario files, never in this module.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .geometry import (RadiusProfile, TubeGeometry, WorldPointPair, geodesic_gradient_residual,
                       world_function_geodesic, world_function_taylor)
from .history import (HistoryContext, augmented_grid_evolution, cancellation_deviation,
                      history_full_brute_force, history_reduced_brute_force, initial_augmented,
                      time_dependent_full_brute_force)
from .kernels import (Capacity, DiscretePath, PhysicsConstants, delta_v_eff_from_b, delta_v_eff_from_S,
                      mode_energy)
from .oscillatory import (apply_full_kernel, apply_mode_kernel, gaussian_moment_contour,
                          gaussian_moment_residual)
from .pde import (Grid1D, ModeStepper, covariant_mode_hamiltonian, ehrenfest_residual, evolve_full_2d,
                  evolve_reduced_1d, evolve_time_dependent, free_packet, gaussian_packet, mode_state_2d,
                  reduced_hamiltonian)
from .polyexpr import ExpressionError, parse_polynomial
from .quadrature import fit_convergence_order
from .sliced import (ConvergenceTable, Lattice, PathEnumeration, SliceSettings, band_limited_discrepancy,
                     brute_force_full, free_kernel, mehler_kernel, reduced_brute_force, reduced_path_propagator)
from .spectral import GridMismatchError, WaveField, project_mode

log = logging.getLogger(__name__)

SCENARIO_KINDS = (
    "oracle_compare",
    "ehrenfest",
    "slicing_convergence",
    "brute_force_equivalence",
    "history_equivalence",
    "moment_identity",
    "xi_scan",
    "kernel_order",
    "td_unitarity",
    "geometry_identities",
)

DEFAULTS = {
    "description": "",
    "constants": {"mass": 1.0, "hbar": 1.0, "xi": 0.0},
    "V0": "0",
    "d": 1,
    "profile": {"kind": "constant", "parameters": {}},
    "grid": {"domain": [-12.0, 12.0], "n_x": 256, "n_phi": 64, "dt": 5e-3, "T": 2.0, "N": 4},
    "k": 0,
    "params": {},
}

# a Gaussian amplitude falls to 1e-6 of its peak at this many widths
BOUNDARY_WIDTHS = 2.0 * math.sqrt(math.log(1e6))
KINETIC_PHASE_LIMIT = math.pi / 3

OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
}


class ExperimentError(RuntimeError):
    pass


# -- spec, validation ---------------------------------------------------------------

@dataclass(frozen=True)
class ValidationIssue:
    pointer: str
    rule: str
    message: str

    def __str__(self):
        return f"{self.pointer or '/'}: [{self.rule}] {self.message}"


class SpecValidationError(ValueError):
    def __init__(self, issues, source=""):
        self.issues = list(issues)
        head = f"{source}: " if source else ""
        super().__init__(head + "; ".join(str(i) for i in self.issues))


def load_schema() -> dict:
    text = resources.files("fibrepath").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def resolve_defaults(data: dict) -> dict:
    """Full config with defaults expanded (the copy embedded in reports)."""
    out = copy.deepcopy(DEFAULTS)
    for key, val in data.items():
        if key in ("constants", "grid") and isinstance(val, dict):
            out[key].update(copy.deepcopy(val))
        else:
            out[key] = copy.deepcopy(val)
    return out


def _epsilons(cfg) -> list:
    """Time steps whose kinetic phase must be resolved by the x-grid."""
    g, p = cfg["grid"], cfg["params"]
    kind = cfg["kind"]
    if kind in ("brute_force_equivalence", "history_equivalence"):
        return [g["T"] / g["N"]]
    if kind == "slicing_convergence":
        Ns = p.get("free", {}).get("N", []) + p.get("harmonic", {}).get("N", [])
        return [g["T"] / n for n in Ns] or [g["T"] / g["N"]]
    if kind == "kernel_order":
        return list(p.get("eps", []))
    if kind in ("xi_scan", "moment_identity", "geometry_identities"):
        return []
    return [g["dt"] / r for r in p.get("refine", [1])]


def _dx_values(cfg) -> list:
    g, p = cfg["grid"], cfg["params"]
    lo, hi = g["domain"]
    if cfg["kind"] == "kernel_order":
        return [(hi - lo) / (p.get("reference_n_x", g["n_x"]) - 1)]
    if cfg["kind"] in ("oracle_compare",):
        return [(hi - lo) / (g["n_x"] * r - 1) for r in p.get("refine", [1])]
    return [(hi - lo) / (g["n_x"] - 1)]


def physical_issues(cfg: dict) -> list[ValidationIssue]:
    """Rules beyond the JSON schema: kinetic-phase resolution, boundary width, step counts."""
    issues = []
    c, g, p = cfg["constants"], cfg["grid"], cfg["params"]
    lo, hi = g["domain"]
    if not lo < hi:
        issues.append(ValidationIssue("/grid/domain", "domain-order", "domain must satisfy x_min < x_max"))
        return issues
    try:
        prof = RadiusProfile.from_dict(cfg["profile"])
    except (ValueError, KeyError, TypeError) as exc:
        issues.append(ValidationIssue("/profile", "profile", str(exc)))
        prof = None
    try:
        parse_polynomial(cfg["V0"])
    except ExpressionError as exc:
        issues.append(ValidationIssue("/V0", "expression", str(exc)))
    # kinetic phase between neighbouring grid points
    eps_list = _epsilons(cfg)
    if eps_list:
        dx_list = _dx_values(cfg)
        if cfg["kind"] == "oracle_compare":
            pairs = list(zip(dx_list, eps_list))
        else:
            pairs = [(dx, e) for dx in dx_list for e in eps_list]
        for dx, e in pairs:
            phase = c["mass"] * dx * dx / (2 * c["hbar"] * e)
            if phase > KINETIC_PHASE_LIMIT * (1 + 1e-12):
                issues.append(ValidationIssue(
                    "/grid", "grid-eps-compatibility",
                    f"m dx^2 / (2 hbar eps) = {phase:.4g} exceeds pi/3 (dx = {dx:.4g}, eps = {e:.4g})"))
                break
    # packets must start well inside the domain
    packets = [("/packet", cfg.get("packet"))]
    if isinstance(p.get("control"), dict):
        packets.append(("/params/control/packet", p["control"].get("packet")))
    for ptr, pk in packets:
        if not pk:
            continue
        margin = BOUNDARY_WIDTHS * pk["sigma"]
        if pk["x0"] - margin < lo or pk["x0"] + margin > hi:
            issues.append(ValidationIssue(
                ptr, "boundary-width",
                f"packet at x0 = {pk['x0']} with sigma = {pk['sigma']} needs {margin:.3g} clearance "
                f"inside [{lo}, {hi}]"))
    # whole number of time steps
    if cfg["kind"] in ("oracle_compare", "ehrenfest"):
        ratio = g["T"] / g["dt"]
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            issues.append(ValidationIssue("/grid/dt", "step-count", "T must be a whole number of steps dt"))
    if cfg["kind"] in ("oracle_compare", "ehrenfest", "kernel_order") and "packet" not in cfg:
        issues.append(ValidationIssue("/packet", "required", f"kind {cfg['kind']} needs a packet"))
    # lattice path budget
    if cfg["kind"] in ("brute_force_equivalence", "history_equivalence"):
        budget = int(p.get("budget", 10_000_000))
        for n_phi in p.get("n_phi_refine", [g["n_phi"]]):
            count = PathEnumeration(Lattice(lo, hi, g["n_x"], n_phi), g["N"]).path_count()
            if count > budget:
                issues.append(ValidationIssue("/params/budget", "path-budget",
                                              f"{count} lattice paths at n_phi = {n_phi} exceed {budget}"))
    # history block
    if cfg["kind"] == "history_equivalence":
        h = cfg.get("history")
        if not h:
            issues.append(ValidationIssue("/history", "required", "history_equivalence needs a history block"))
        else:
            try:
                ctx = HistoryContext(parse_polynomial(h["f"]), tuple(h.get("eta_range", (-1.0, 1.0))),
                                     h.get("d_eta", 0.01))
                need = ctx.reachable(lo, hi, g["T"])
                er = ctx.eta_range
                if er[0] > need[0] + 1e-12 or er[1] < need[1] - 1e-12:
                    issues.append(ValidationIssue("/history/eta_range", "eta-range",
                                                  f"eta range {list(er)} does not cover reachable {list(need)}"))
            except ExpressionError as exc:
                issues.append(ValidationIssue("/history/f", "expression", str(exc)))
            except ValueError as exc:
                issues.append(ValidationIssue("/history", "history", str(exc)))
    if prof is not None and prof.kind == "constant" and cfg["kind"] == "moment_identity":
        issues.append(ValidationIssue("/profile", "profile",
                                      "moment_identity needs a curved profile (the flat case is run separately)"))
    return issues


def validate(data) -> list[ValidationIssue]:
    """Schema and physical-rule diagnostics; empty when the scenario is valid."""
    validator = jsonschema.Draft202012Validator(load_schema())
    issues = [ValidationIssue(_pointer(e.absolute_path), "schema", e.message)
              for e in sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))]
    if issues:
        return issues
    return physical_issues(resolve_defaults(data))


@dataclass
class ExperimentSpec:
    """A validated scenario with defaults resolved."""

    name: str
    kind: str
    config: dict

    @classmethod
    def from_dict(cls, data: dict, source: str = "") -> "ExperimentSpec":
        issues = validate(data)
        if issues:
            raise SpecValidationError(issues, source or data.get("name", ""))
        cfg = resolve_defaults(data)
        return cls(cfg["name"], cfg["kind"], cfg)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SpecValidationError([ValidationIssue("", "json", str(exc))], str(path)) from exc
        return cls.from_dict(data, str(path))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.config)

    # convenience accessors
    @property
    def constants(self) -> PhysicsConstants:
        c = self.config["constants"]
        return PhysicsConstants(mass=c["mass"], hbar=c["hbar"], xi=c["xi"], V0=self.config["V0"])

    @property
    def profile(self) -> RadiusProfile:
        return RadiusProfile.from_dict(self.config["profile"])

    def geometry(self, profile: RadiusProfile | None = None) -> TubeGeometry:
        return TubeGeometry(profile or self.profile, d=self.config["d"], x_domain=tuple(self.grid["domain"]))

    @property
    def grid(self) -> dict:
        return self.config["grid"]

    @property
    def params(self) -> dict:
        return self.config["params"]


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def add(self, *row):
        self.rows.append(row)


@dataclass
class CheckResult:
    metric: str
    op: str
    value: float
    observed: float | None
    passed: bool
    label: str = ""


@dataclass
class ExperimentReport:
    spec: dict
    metrics: dict
    checks: list
    artifacts: list
    wall_time: float
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "name": self.spec["name"],
            "kind": self.spec["kind"],
            "passed": self.passed,
            "error": self.error,
            "metrics": {k: _json_number(v) for k, v in self.metrics.items()},
            "checks": [c.__dict__ | {"observed": _json_number(c.observed)} for c in self.checks],
            "artifacts": self.artifacts,
            "wall_time": self.wall_time,
            "spec": self.spec,
        }


def _json_number(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_table(path: Path, table: Table):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(table.columns)
        for row in table.rows:
            wr.writerow([_fmt(v) for v in row])


# -- comparisons ----------------------------------------------------------------------

def compare_fields(a, b, norm: str = "L2", relative: bool = True) -> float:
    """Discrepancy between two fields on the same grid.

    ``a`` is the reference: with ``relative`` the result is ||a - b|| / ||a||.
    L2 uses the fields' quadrature measure (uniform spacing, plus the
    covariant weight for 2D fields); Linf is the largest pointwise modulus.
    Plain arrays are compared with unit measure.
    """
    if norm not in ("L2", "Linf"):
        raise ValueError("norm must be 'L2' or 'Linf'")
    if isinstance(a, WaveField) or isinstance(b, WaveField):
        if not (isinstance(a, WaveField) and isinstance(b, WaveField)) or not a.same_grid(b):
            raise GridMismatchError("fields live on different grids")
        va, vb = a.values, b.values
        meas = a.dx
        if a.dims == 2:
            meas = a.dx * a.dphi
            if a.weight is not None:
                meas = meas * np.asarray(a.weight)[:, None]
    else:
        va, vb = np.asarray(a), np.asarray(b)
        if va.shape != vb.shape:
            raise GridMismatchError("arrays have different shapes")
        meas = 1.0
    diff = va - vb
    if norm == "L2":
        num = math.sqrt(float(np.sum(np.abs(diff) ** 2 * meas)))
        den = math.sqrt(float(np.sum(np.abs(va) ** 2 * meas)))
    else:
        num = float(np.max(np.abs(diff)))
        den = float(np.max(np.abs(va)))
    if not relative:
        return num
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return num / den


def _l2(x, u) -> float:
    return math.sqrt(float(np.sum(np.abs(u) ** 2)) * (x[1] - x[0]))


def _slope(hs, errs) -> float:
    return fit_convergence_order(zip(hs, errs))


# -- scenario runners -------------------------------------------------------------------
# Each runner fills ``metrics`` (named reals) and ``tables`` (name -> Table) in place so
# that partial results survive an exception.

def _packet(spec, x, pk=None):
    pk = pk or spec.config["packet"]
    return gaussian_packet(x, pk["sigma"], pk["x0"], pk.get("p0", 0.0), spec.constants.hbar)


def _x_grid(spec, scale=1):
    lo, hi = spec.grid["domain"]
    return np.linspace(lo, hi, spec.grid["n_x"] * scale)


def run_xi_scan(spec: ExperimentSpec, metrics: dict, tables: dict):
    """Pointwise agreement of the b-form and S-form of the quantum correction."""
    p = spec.params
    c = spec.constants
    profiles = [RadiusProfile.from_dict(pd) for pd in p.get("profiles", [spec.config["profile"]])]
    lo, hi = p.get("sample_domain", spec.grid["domain"])
    x = np.linspace(lo, hi, p.get("n_points", 101))
    tab = Table(["profile", "xi", "d", "cell_scale", "max_abs_difference", "max_abs_value"])
    worst = 0.0
    count = 0
    for prof in profiles:
        for xi in p.get("xi", [c.xi]):
            cc = PhysicsConstants(c.mass, c.hbar, xi, c.V0)
            for d in p.get("d", [spec.config["d"]]):
                for ell in p.get("cell_scale", [1.0]):
                    vb = delta_v_eff_from_b(prof, cc, x, d=d)
                    vs = delta_v_eff_from_S(Capacity(prof, ell, d), cc, x, d)
                    diff = float(np.max(np.abs(vb - vs)))
                    worst = max(worst, diff)
                    count += 1
                    tab.add(prof.kind, xi, d, ell, diff, float(np.max(np.abs(vb))))
    tables["form_equivalence"] = tab
    metrics["max_abs_difference"] = worst
    metrics["cases"] = count


def run_oracle_compare(spec: ExperimentSpec, metrics: dict, tables: dict):
    """Mode projection of the full 2D evolution against the reduced 1D evolution."""
    p, g = spec.params, spec.grid
    geom, c, k = spec.geometry(), spec.constants, spec.config["k"]
    order = p.get("order", 4)
    steps = int(round(g["T"] / g["dt"]))
    levels = p.get("refine", [1])
    with_dv, without_dv = [], []
    tab = Table(["refine", "n_x", "dt", "l2_with_delta_v", "l2_without_delta_v"])
    for r in levels:
        x = _x_grid(spec, r)
        psi0 = _packet(spec, x)
        dt = g["dt"] / r
        full = evolve_full_2d(mode_state_2d(geom, x, g["n_phi"], k, psi0), geom, c, dt, steps * r, order)
        pk = project_mode(full, geom, k).values
        red = evolve_reduced_1d(WaveField(x, psi0), geom, c, k=k, dt=dt, steps=steps * r, order=order).values
        with_dv.append(_l2(x, pk - red))
        row_without = float("nan")
        if p.get("compare_without_delta_v", False):
            red0 = evolve_reduced_1d(WaveField(x, psi0), geom, c, k=k, dt=dt, steps=steps * r,
                                     include_delta_v=False, order=order).values
            row_without = _l2(x, pk - red0)
            without_dv.append(row_without)
        tab.add(r, x.size, dt, with_dv[-1], row_without)
        metrics[f"l2_with_delta_v_r{r}"] = with_dv[-1]
        if r == levels[0]:
            metrics["l2_with_delta_v"] = with_dv[0]
            metrics["max_abs_delta_v"] = float(np.max(np.abs(delta_v_eff_from_b(geom, c, x))))
            if without_dv:
                metrics["l2_without_delta_v"] = without_dv[0]
                metrics["ratio_with_to_without"] = with_dv[0] / without_dv[0]
            if p.get("analytic_free", False):
                # b = const, V0 = 0: free packet times the fibre phase
                pk0 = spec.config["packet"]
                T = g["T"]
                exact = free_packet(x, T, pk0["sigma"], pk0["x0"], pk0.get("p0", 0.0), c.hbar, c.mass)
                exact = exact * np.exp(-1j * mode_energy(c, k) / float(geom.profile.b(0.0)) ** 2 * T / c.hbar)
                metrics["l2_reduced_vs_analytic"] = _l2(x, red - exact)
                tables["final_fields"] = Table(["x", "re_full_mode", "im_full_mode", "re_reduced", "im_reduced",
                                                "re_analytic", "im_analytic"],
                                               list(zip(x, pk.real, pk.imag, red.real, red.imag, exact.real,
                                                        exact.imag)))
            else:
                tables["final_fields"] = Table(["x", "re_full_mode", "im_full_mode", "re_reduced", "im_reduced"],
                                               list(zip(x, pk.real, pk.imag, red.real, red.imag)))
    if len(with_dv) > 1:
        metrics["refinement_ratio"] = max(b / a for a, b in zip(with_dv[:-1], with_dv[1:]))
    tables["refinement"] = tab


def run_ehrenfest(spec: ExperimentSpec, metrics: dict, tables: dict):
    """Mean-motion residual of the full evolution with and without the quantum correction."""
    p, g = spec.params, spec.grid
    geom, c, k = spec.geometry(), spec.constants, spec.config["k"]
    steps = int(round(g["T"] / g["dt"]))
    x = _x_grid(spec)
    traj = evolve_full_2d(mode_state_2d(geom, x, g["n_phi"], k, _packet(spec, x)), geom, c, g["dt"], steps,
                          p.get("order", 4), snapshot_every=1)
    E = mode_energy(c, k)
    t, r_with = ehrenfest_residual(traj, geom, c, E, True)
    _, r_without = ehrenfest_residual(traj, geom, c, E, False)
    metrics["max_residual_with_delta_v"] = float(np.max(np.abs(r_with)))
    metrics["max_residual_without_delta_v"] = float(np.max(np.abs(r_without)))
    metrics["ratio_with_to_without"] = metrics["max_residual_with_delta_v"] / metrics["max_residual_without_delta_v"]
    tables["residuals"] = Table(["t", "residual_with_delta_v", "residual_without_delta_v"],
                                list(zip(t, r_with, r_without)))
    ctl = p.get("control")
    if ctl:
        prof = RadiusProfile.from_dict(ctl.get("profile", {"kind": "constant", "parameters": {}}))
        cgeom = spec.geometry(prof)
        cc = PhysicsConstants(c.mass, c.hbar, c.xi, ctl.get("V0", "0"))
        ck = ctl.get("k", 0)
        ctraj = evolve_full_2d(mode_state_2d(cgeom, x, g["n_phi"], ck, _packet(spec, x, ctl["packet"])), cgeom, cc,
                               g["dt"], steps, p.get("order", 4), snapshot_every=1)
        tc, rc = ehrenfest_residual(ctraj, cgeom, cc, mode_energy(cc, ck), True)
        metrics["control_max_residual"] = float(np.max(np.abs(rc)))
        tables["control_residuals"] = Table(["t", "residual"], list(zip(tc, rc)))


def _one_step_reference(grid, H, hbar, v, eps, substeps):
    st = ModeStepper(grid, hbar, lambda t: H)
    for _ in range(substeps):
        v = st.step(v, 0.0, eps / substeps)
    return v


def run_kernel_order(spec: ExperimentSpec, metrics: dict, tables: dict):
    """One short-time kernel step against a finely resolved PDE step."""
    p = spec.params
    geom, c, k = spec.geometry(), spec.constants, spec.config["k"]
    lo, hi = spec.grid["domain"]
    X = np.linspace(lo, hi, p.get("reference_n_x", 2401))
    grid = Grid1D(X, p.get("order", 4))
    pk = spec.config["packet"]

    def gfun(z):
        return np.exp(-(z - pk["x0"]) ** 2 / (4 * pk["sigma"] ** 2) + 1j * pk.get("p0", 0.0) * z / c.hbar)

    E = mode_energy(c, k)
    Hc = covariant_mode_hamiltonian(grid, geom, c, k)
    Hr = reduced_hamiltonian(grid, geom, c, E, True)
    Hr0 = reduced_hamiltonian(grid, geom, c, E, False)
    sel = np.abs(X - pk["x0"]) <= p.get("window", 4.0)
    b = geom.profile.b(X)
    sub = p.get("substeps", 400)
    tab = Table(["eps", "residual_full", "residual_mode", "residual_mode_without_delta_v"])
    res_f, res_m, res_m0 = [], [], []
    eps_list = p.get("eps", [0.04, 0.02, 0.01, 0.005])
    for eps in eps_list:
        ref_c = _one_step_reference(grid, Hc, c.hbar, np.sqrt(b) * gfun(X), eps, sub) / np.sqrt(b)
        ref_r = _one_step_reference(grid, Hr, c.hbar, gfun(X), eps, sub)
        ref_r0 = _one_step_reference(grid, Hr0, c.hbar, gfun(X), eps, sub)
        kc = apply_full_kernel(geom, c, k, gfun, X[sel], eps, n_nodes=p.get("full_nodes", 20))
        km = apply_mode_kernel(geom, c, k, gfun, X[sel], eps, n_nodes=p.get("mode_nodes", 40))
        res_f.append(_l2(X, kc - ref_c[sel]))
        res_m.append(_l2(X, km - ref_r[sel]))
        res_m0.append(_l2(X, km - ref_r0[sel]))
        tab.add(eps, res_f[-1], res_m[-1], res_m0[-1])
    tables["kernel_residuals"] = tab
    metrics["slope_full"] = _slope(eps_list, res_f)
    metrics["slope_mode"] = _slope(eps_list, res_m)
    metrics["slope_mode_without_delta_v"] = _slope(eps_list, res_m0)
    metrics["residual_full_smallest_eps"] = res_f[-1]
    metrics["residual_mode_smallest_eps"] = res_m[-1]


def run_moment_identity(spec: ExperimentSpec, metrics: dict, tables: dict):
    """Normalised Gaussian-moment residual, regulated real grid with extrapolation."""
    p = spec.params
    geom, c = spec.geometry(), spec.constants
    x = p.get("x", 0.3)
    eps_list = p.get("eps", [0.04, 0.02, 0.01, 0.005])
    opts = dict(deltas=tuple(p.get("deltas", (0.05, 0.025, 0.0125))), half_width=p.get("half_width", 5.0),
                points_per_wavelength=p.get("points_per_wavelength", 5.0), max_points=p.get("max_points", 8000))
    tab = Table(["profile", "eps", "residual_regulated", "extrapolation_error", "residual_contour"])
    reg, cont = [], []
    for eps in eps_list:
        mr = gaussian_moment_residual(geom, c, x, eps, **opts)
        rc = gaussian_moment_contour(geom, c, x, eps, n_nodes=p.get("contour_nodes", 48))[0]
        reg.append(mr.residual)
        cont.append(rc)
        tab.add(geom.profile.kind, eps, mr.residual, mr.extrapolation_error, rc)
        metrics["max_extrapolation_error"] = max(metrics.get("max_extrapolation_error", 0.0),
                                                 mr.extrapolation_error)
    metrics["slope_regulated"] = _slope(eps_list, reg)
    metrics["slope_contour"] = _slope(eps_list, cont)
    metrics["max_contour_disagreement"] = max(abs(a - b) / abs(b) for a, b in zip(reg, cont))
    flat = spec.geometry(RadiusProfile("constant"))
    worst = 0.0
    for eps in p.get("flat_eps", [0.04, 0.01]):
        mr = gaussian_moment_residual(flat, c, x, eps, **opts)
        worst = max(worst, mr.residual)
        tab.add("constant", eps, mr.residual, mr.extrapolation_error, float("nan"))
    metrics["flat_max_residual"] = worst
    tables["moment_residuals"] = tab


def run_slicing_convergence(spec: ExperimentSpec, metrics: dict, tables: dict):
    """Composed short-time kernels against the free and Mehler kernels."""
    p, g = spec.params, spec.grid
    c = spec.constants
    flat = spec.geometry(RadiusProfile("constant"))
    x = _x_grid(spec)
    T = g["T"]
    delta = p.get("delta", 0.05)
    sel = np.abs(x) <= p.get("interior", 1.5)
    box = np.ix_(sel, sel)
    Tc = T * (1 - 1j * delta)

    def rel(K, ex):
        return float(np.max(np.abs(K - ex)[box]) / np.max(np.abs(ex[box])))

    free_tab = ConvergenceTable()
    free_c = PhysicsConstants(c.mass, c.hbar, c.xi, "0")
    ex = free_kernel(x[:, None], x[None, :], Tc, c.mass, c.hbar)
    errs = []
    for N in p.get("free", {}).get("N", [1, 2, 4, 8]):
        K = reduced_path_propagator(flat, free_c, 0, x, T, N, delta=delta)
        errs.append(rel(K.K, ex))
        free_tab.add(N, x.size, 1, T / N, errs[-1])
    metrics["free_max_rel_error"] = max(errs)
    h = p.get("harmonic", {})
    V0 = parse_polynomial(h.get("V0", "0.5*x**2"))
    coef = V0.coef
    if V0.degree() != 2 or np.any(coef[:2] != 0):
        raise ExperimentError("harmonic reference needs V0 = a x^2")
    omega = math.sqrt(2 * coef[2] / c.mass)
    hc = PhysicsConstants(c.mass, c.hbar, c.xi, V0)
    ex = mehler_kernel(x[:, None], x[None, :], Tc, omega, c.mass, c.hbar)
    harm_tab = ConvergenceTable()
    Ns = h.get("N", [4, 8, 16, 32])
    herrs = []
    for N in Ns:
        K = reduced_path_propagator(flat, hc, 0, x, T, N, delta=delta, point=h.get("point", "later"))
        herrs.append(rel(K.K, ex))
        harm_tab.add(N, x.size, 1, T / N, herrs[-1])
    metrics["harmonic_slope"] = _slope([T / N for N in Ns], herrs)
    metrics["harmonic_monotone"] = float(all(b < a for a, b in zip(herrs[:-1], herrs[1:])))
    metrics["harmonic_finest_error"] = herrs[-1]
    tables["free_convergence"] = free_tab
    tables["harmonic_convergence"] = harm_tab


def _slice_settings(p) -> SliceSettings:
    return SliceSettings(delta=p.get("delta", 0.05), w_max=p.get("w_max", 1), point=p.get("point", "later"),
                         budget=int(p.get("budget", 10_000_000)))


def _lattice_equivalence(spec, metrics, tables, geom, f=None):
    p, g = spec.params, spec.grid
    c = spec.constants
    lo, hi = g["domain"]
    st = _slice_settings(p)
    k_max = p.get("k_max", 1)
    levels = p.get("n_phi_refine", [g["n_phi"]])
    tab = Table(["n_phi", "k", "relative_discrepancy", "path_count", "seconds"])
    discs = []
    for n_phi in levels:
        lat = Lattice(lo, hi, g["n_x"], n_phi)
        t0 = time.perf_counter()
        full = brute_force_full(geom, c, lat, g["T"], g["N"], st, f=f)
        R = {k: reduced_brute_force(geom, c, k, lat, g["T"], g["N"], st, f=f) for k in range(-k_max, k_max + 1)}
        secs = time.perf_counter() - t0
        total, per = band_limited_discrepancy(full.modes, R, n_phi)
        discs.append(total)
        for k in sorted(per):
            tab.add(n_phi, k, per[k], full.path_count, round(secs, 3))
        metrics[f"discrepancy_nphi{n_phi}"] = total
        metrics[f"seconds_nphi{n_phi}"] = secs
    metrics["discrepancy"] = discs[0]
    if len(discs) > 1:
        metrics["shrink_ratio"] = discs[-1] / discs[0]
    tables["lattice_discrepancy"] = tab
    return geom, c, st


def run_brute_force_equivalence(spec: ExperimentSpec, metrics: dict, tables: dict):
    """Full lattice path sum against the mode sum of reduced lattice sums."""
    _lattice_equivalence(spec, metrics, tables, spec.geometry())


def _history_profile(spec) -> RadiusProfile:
    """The scenario profile with the history block's coupling mu."""
    prof = spec.profile
    return RadiusProfile(prof.kind, prof.parameters, history_coupling=spec.config["history"]["mu"],
                         history_curvature=prof.history_curvature)


def run_history_equivalence(spec: ExperimentSpec, metrics: dict, tables: dict):
    """Lattice equivalence with a history-dependent radius, plus the bridges to time dependence."""
    p, g, h = spec.params, spec.grid, spec.config["history"]
    prof = _history_profile(spec)
    ctx = HistoryContext(parse_polynomial(h["f"]), tuple(h.get("eta_range", (-1.0, 1.0))), h.get("d_eta", 0.01))
    geom, c, st = _lattice_equivalence(spec, metrics, tables, spec.geometry(prof), f=ctx.f)
    lo, hi = g["domain"]
    lat = Lattice(lo, hi, g["n_x"], p.get("n_phi_refine", [g["n_phi"]])[0])

    # f = 1 through the history entry point against the time-dependent entry point
    one = HistoryContext(parse_polynomial("1"), (0.0, g["T"]), g["T"] / g["N"])
    a = history_full_brute_force(geom, one, c, lat, g["T"], g["N"], st)
    b = time_dependent_full_brute_force(geom, c, lat, g["T"], g["N"], st)
    metrics["f1_bitwise_mismatch"] = float(np.count_nonzero(a.modes != b.modes) + np.count_nonzero(a.P != b.P))

    # augmented (x, eta) kernel evolution reproduces the reduced lattice sum
    k = spec.config["k"]
    eps = g["T"] / g["N"]
    R = history_reduced_brute_force(geom, ctx, c, k, lat, g["T"], g["N"], st)
    fx = ctx.f(lat.x)
    d_eta = p.get("augmented_d_eta", float(np.min(np.abs(np.diff(fx)))) * eps)
    lo_e, hi_e = ctx.reachable(lo, hi, g["T"])
    aug_ctx = HistoryContext(ctx.f, (lo_e - d_eta, hi_e + d_eta), d_eta)
    worst = 0.0
    w = lat.x_weights
    for i0 in range(lat.n_x):
        st0 = initial_augmented(lat.x, aug_ctx.eta_grid, np.eye(lat.n_x)[i0] / w[i0])
        out = augmented_grid_evolution(st0, geom, aug_ctx, c, k, eps, g["N"], x_step="kernel", settings=st,
                                       interpolate=False)
        worst = max(worst, float(np.max(np.abs(out.marginal() - R[:, i0])) / np.max(np.abs(R[:, i0]))))
    metrics["augmented_vs_lattice"] = worst

    # f = 1 augmented grid evolution against time-dependent reduced evolution
    gb = p.get("grid_bridge", {})
    xb = np.linspace(*gb.get("domain", [-12.0, 12.0]), gb.get("n_x", 256))
    dtb = gb.get("dt", 5e-3)
    nb = gb.get("steps", 100)
    pkb = gb.get("packet", {"x0": -3.0, "sigma": 1.0, "p0": 1.0})
    psi0 = gaussian_packet(xb, pkb["sigma"], pkb["x0"], pkb.get("p0", 0.0), c.hbar)
    bgeom = TubeGeometry(prof, d=geom.d, x_domain=tuple(gb.get("domain", [-12.0, 12.0])))
    one = HistoryContext(parse_polynomial("1"), (0.0, dtb * nb), dtb)
    aug = augmented_grid_evolution(initial_augmented(xb, one.eta_grid, psi0), bgeom, one, c, k, dtb, nb)
    ref = evolve_reduced_1d(WaveField(xb, psi0), bgeom, c, k=k, dt=dtb, steps=nb, time_dependent=True).values
    metrics["f1_grid_vs_time_dependent"] = float(np.max(np.abs(aug.marginal() - ref)))

    # cancellation of measure ratios against the compensation rate, at fixed N
    cp = p.get("cancellation", {})
    cprof = RadiusProfile(prof.kind, prof.parameters, history_coupling=prof.history_coupling,
                          history_curvature=cp.get("nu", prof.history_curvature))
    cgeom = TubeGeometry(cprof, d=geom.d)
    xs = np.asarray(cp.get("path", [0.3, -0.5, 0.75, 0.1, -0.2]), float)
    eps_list = cp.get("eps", [0.4, 0.2, 0.1, 0.05])
    devs = [cancellation_deviation(cgeom, DiscretePath(xs, e), ctx.f) for e in eps_list]
    tables["cancellation"] = Table(["eps", "deviation"], list(zip(eps_list, devs)))
    metrics["cancellation_slope"] = _slope(eps_list, devs)
    metrics["cancellation_deviation_smallest_eps"] = devs[-1]


def run_td_unitarity(spec: ExperimentSpec, metrics: dict, tables: dict):
    """Covariant norm drift per step with and without the compensation term."""
    p, g = spec.params, spec.grid
    geom, c = spec.geometry(), spec.constants
    x = _x_grid(spec)
    pk = spec.config.get("packet", {"x0": -3.0, "sigma": 1.0, "p0": 1.0})
    psi0 = _packet(spec, x, pk)
    vals = 0
    for mode, amp in p.get("modes", [[1, 1.0]]):
        vals = vals + mode_state_2d(geom, x, g["n_phi"], mode, amp * psi0).values
    fld = mode_state_2d(geom, x, g["n_phi"], 0, psi0).with_values(vals)
    duration = p.get("duration", 0.4)
    dts = p.get("dt", [0.04, 0.02, 0.01, 0.005])
    tab = Table(["dt", "max_drift_compensated", "max_drift_ablation"])
    comp, abl = [], []
    for dt in dts:
        out = []
        for flag in (True, False):
            tr = evolve_time_dependent(fld, geom, c, dt, int(round(duration / dt)), compensation=flag,
                                       snapshot_every=1)
            norms = np.array([f.norm() for f in tr.fields])
            out.append(float(np.max(np.abs(np.diff(norms)))))
        comp.append(out[0])
        abl.append(out[1])
        tab.add(dt, out[0], out[1])
    tables["norm_drift"] = tab
    metrics["max_drift_per_step"] = max(comp)
    metrics["ablation_slope"] = _slope(dts, abl)
    # a static radius through the time-dependent code equals the static evolution
    static = spec.geometry(RadiusProfile(geom.profile.kind, geom.profile.parameters))
    a = evolve_time_dependent(fld, static, c, dts[-1], 10).values
    b = evolve_full_2d(fld, static, c, dts[-1], 10).values
    metrics["static_code_path_difference"] = float(np.max(np.abs(a - b)))


def run_geometry_identities(spec: ExperimentSpec, metrics: dict, tables: dict):
    """World-function symmetry, Taylor-versus-geodesic order and the gradient identity."""
    p = spec.params
    geom = spec.geometry()
    pairs = [WorldPointPair(*pp) for pp in p.get("pairs", [[0.1, 0.5, 0.3], [-0.4, 0.2, -0.6], [0.3, -0.2, 1.0]])]
    sym = 0.0
    grad = 0.0
    tab = Table(["x", "x_prime", "delta_phi", "sigma_geodesic", "symmetry_geodesic", "symmetry_taylor",
                 "gradient_residual"])
    for pair in pairs:
        sg = world_function_geodesic(geom, pair, tol=1e-12)
        dg = abs(sg - world_function_geodesic(geom, pair.swapped(), tol=1e-12))
        dt = abs(world_function_taylor(geom, pair) - world_function_taylor(geom, pair.swapped()))
        gr = geodesic_gradient_residual(geom, pair, step=p.get("step", 1e-4))
        sym = max(sym, dg, dt)
        grad = max(grad, gr)
        tab.add(pair.x, pair.x_prime, pair.delta_phi, sg, dg, dt, gr)
    tables["pairs"] = tab
    metrics["symmetry_max"] = sym
    metrics["gradient_identity_max_rel"] = grad
    seq = p.get("sequence", {})
    xc = seq.get("center", 0.2)
    ax, aphi = seq.get("direction", [1.0, 0.8])
    data = []
    stab = Table(["scale", "sigma_geodesic", "taylor_error"])
    for s in seq.get("scales", [0.4, 0.2, 0.1, 0.05]):
        pair = WorldPointPair(xc - 0.5 * ax * s, xc + 0.5 * ax * s, aphi * s)
        sb = world_function_geodesic(geom, pair, tol=1e-13)
        err = abs(world_function_taylor(geom, pair) - sb)
        data.append((sb, err))
        stab.add(s, sb, err)
    tables["taylor_sequence"] = stab
    metrics["taylor_bvp_slope"] = fit_convergence_order(data)


RUNNERS = {
    "oracle_compare": run_oracle_compare,
    "ehrenfest": run_ehrenfest,
    "slicing_convergence": run_slicing_convergence,
    "brute_force_equivalence": run_brute_force_equivalence,
    "history_equivalence": run_history_equivalence,
    "moment_identity": run_moment_identity,
    "xi_scan": run_xi_scan,
    "kernel_order": run_kernel_order,
    "td_unitarity": run_td_unitarity,
    "geometry_identities": run_geometry_identities,
}


# -- execution ----------------------------------------------------------------------------

def evaluate_checks(checks, metrics) -> list[CheckResult]:
    out = []
    for chk in checks:
        obs = metrics.get(chk["metric"])
        ok = obs is not None and math.isfinite(float(obs)) and OPS[chk["op"]](float(obs), chk["value"])
        out.append(CheckResult(chk["metric"], chk["op"], chk["value"], None if obs is None else float(obs),
                               bool(ok), chk.get("label", "")))
    return out


def run(spec: ExperimentSpec, out_dir=None) -> ExperimentReport:
    """Execute a scenario, write its CSVs and JSON report, and evaluate its checks.

    Module errors are caught and recorded with the scenario name; metrics
    computed before the failure are kept in the report.
    """
    metrics: dict = {}
    tables: dict = {}
    error = None
    t0 = time.perf_counter()
    try:
        RUNNERS[spec.kind](spec, metrics, tables)
    except Exception as exc:  # surfaced with scenario context, partial results kept
        error = f"{spec.name} ({spec.kind}): {type(exc).__name__}: {exc}"
        log.error(error)
    wall = time.perf_counter() - t0
    checks = evaluate_checks(spec.config["checks"], metrics)
    artifacts = []
    report = ExperimentReport(spec.to_dict(), metrics, checks, artifacts, wall, error)
    if out_dir is not None:
        target = Path(out_dir) / spec.name
        target.mkdir(parents=True, exist_ok=True)
        for name in sorted(tables):
            path = target / f"{name}.csv"
            tab = tables[name]
            if isinstance(tab, ConvergenceTable):
                tab.write_csv(path)
            else:
                write_table(path, tab)
            artifacts.append(str(path))
        (target / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        artifacts.append(str(target / "report.json"))
    return report


# -- built-in scenarios -----------------------------------------------------------------------

def builtin_scenarios() -> dict:
    """name -> path of the scenario files shipped with the package."""
    root = resources.files("fibrepath").joinpath("scenarios")
    out = {}
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            out[entry.name[:-5]] = Path(str(entry))
    return out


def load_builtin(name: str) -> ExperimentSpec:
    table = builtin_scenarios()
    if name not in table:
        raise KeyError(f"unknown scenario {name!r}")
    return ExperimentSpec.load(table[name])
