"""Command-line front end: run, validate, list, eval.

Exit codes: 0 all checks pass, 1 a check or scenario failed, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .experiments import (ExperimentSpec, SpecValidationError, ValidationIssue, builtin_scenarios, run,
                          validate)
from .geometry import (GeodesicError, RadiusProfile, TubeGeometry, WorldPointPair, scalar_curvature,
                       world_function_geodesic, world_function_taylor)
from .kernels import PhysicsConstants, classical_effective_potential, delta_v_eff_from_b, mode_energy
from .polyexpr import ExpressionError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
FORMULAS = ("delta_v", "v_cl", "curvature", "sigma")


class UsageError(Exception):
    pass


def _resolve(target: str) -> Path:
    """A scenario file path or the name of a built-in scenario."""
    p = Path(target)
    if p.suffix == ".json" or p.exists():
        if not p.exists():
            raise UsageError(f"no such file: {target}")
        return p
    table = builtin_scenarios()
    if target in table:
        return table[target]
    raise UsageError(f"unknown scenario {target!r}; see 'fibrepath list'")


def _load_all(targets):
    specs = []
    for t in targets:
        specs.append(ExperimentSpec.load(_resolve(t)))
    return specs


def _run_one(args):
    spec, out = args
    return run(spec, out)


def cmd_run(ns) -> int:
    targets = list(ns.scenarios)
    if ns.all:
        targets += list(builtin_scenarios())
    if not targets:
        raise UsageError("run needs at least one scenario (file or built-in name) or --all")
    specs = _load_all(targets)
    jobs = max(1, ns.jobs)
    work = [(s, ns.out) for s in specs]
    if jobs > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_one, work))
    else:
        reports = [_run_one(w) for w in work]
    width = max(len(r.spec["name"]) for r in reports)
    print(f"{'scenario':<{width}}  {'kind':<24} {'result':<6} {'seconds':>8}")
    for r in reports:
        print(f"{r.spec['name']:<{width}}  {r.spec['kind']:<24} {'pass' if r.passed else 'FAIL':<6} "
              f"{r.wall_time:8.1f}")
        if r.error:
            print(f"    error: {r.error}")
        if not ns.quiet:
            for c in r.checks:
                obs = "missing" if c.observed is None else f"{c.observed:.6g}"
                print(f"    {'ok  ' if c.passed else 'FAIL'} {c.metric} = {obs} (required {c.op} {c.value:g})")
    if not ns.quiet:
        print(f"reports written under {Path(ns.out).resolve()}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_validate(ns) -> int:
    status = EXIT_OK
    for target in ns.scenarios:
        path = _resolve(target)
        try:
            data = json.loads(path.read_text())
            issues = validate(data)
        except json.JSONDecodeError as exc:
            issues = [ValidationIssue("", "json", str(exc))]
        if issues:
            status = EXIT_USAGE
            print(f"{path}: invalid")
            for issue in issues:
                print(f"    {issue}")
        elif not ns.quiet:
            print(f"{path}: ok")
    return status


def cmd_list(ns) -> int:
    for name, path in builtin_scenarios().items():
        data = json.loads(path.read_text())
        if ns.quiet:
            print(name)
        else:
            print(f"{name:<26} {data['kind']:<24} {data.get('description', '')}")
    return EXIT_OK


def evaluate_formula(ns) -> float:
    """Library value behind ``eval``."""
    try:
        profile = RadiusProfile.parse(ns.profile)
        constants = PhysicsConstants(mass=ns.mass, hbar=ns.hbar, xi=ns.xi, V0=ns.V0)
    except (ValueError, ExpressionError) as exc:
        raise UsageError(str(exc)) from exc
    geom = TubeGeometry(profile, d=ns.d)
    if ns.formula == "delta_v":
        return float(delta_v_eff_from_b(geom, constants, ns.x, eta=ns.eta))
    if ns.formula == "v_cl":
        E = ns.e_phi if ns.e_phi is not None else mode_energy(constants, ns.k)
        return float(classical_effective_potential(geom, constants, ns.x, E, eta=ns.eta))
    if ns.formula == "curvature":
        return float(scalar_curvature(geom, ns.x, eta=ns.eta))
    x_prime = ns.x if ns.x_prime is None else ns.x_prime
    pair = WorldPointPair(ns.x, x_prime, ns.dphi, ns.winding)
    if ns.method == "geodesic":
        return world_function_geodesic(geom, pair, eta=ns.eta)
    return world_function_taylor(geom, pair, eta=ns.eta)


def cmd_eval(ns) -> int:
    print(f"{evaluate_formula(ns) + 0.0:.12g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="./out", help="directory for CSV tables and JSON reports (default ./out)")
    common.add_argument("--jobs", type=int, default=1, help="number of scenarios run in parallel")
    common.add_argument("--quiet", action="store_true", help="print only the summary")

    parser = argparse.ArgumentParser(prog="fibrepath", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run scenarios and evaluate their checks")
    p.add_argument("scenarios", nargs="*", help="scenario JSON files or built-in names")
    p.add_argument("--all", action="store_true", help="run every built-in scenario")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", parents=[common], help="check scenario files against schema and rules")
    p.add_argument("scenarios", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("list", parents=[common], help="list built-in scenarios")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("eval", parents=[common], help="print one formula value")
    p.add_argument("formula", choices=FORMULAS)
    p.add_argument("--profile", default="const:b=1", help="kind:key=val,... e.g. exp:lambda=1, tanh:amp=0.2")
    p.add_argument("--x", type=float, default=0.0)
    p.add_argument("--x-prime", type=float, default=None, help="second point for sigma (default: --x)")
    p.add_argument("--dphi", type=float, default=0.0, help="fibre separation for sigma")
    p.add_argument("--winding", type=int, default=0)
    p.add_argument("--method", choices=("taylor", "geodesic"), default="taylor")
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--xi", type=float, default=0.0)
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--hbar", type=float, default=1.0)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--V0", default="0", help="polynomial in x, e.g. '0.5*x**2'")
    p.add_argument("--k", type=int, default=0, help="fibre mode for v_cl")
    p.add_argument("--e-phi", type=float, default=None, help="fibre energy for v_cl (overrides --k)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.ERROR if ns.quiet else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return ns.func(ns)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SpecValidationError as exc:
        print("invalid scenario:", file=sys.stderr)
        for issue in exc.issues:
            print(f"    {issue}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, GeodesicError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
