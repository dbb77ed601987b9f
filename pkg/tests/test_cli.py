import copy
import json
from types import SimpleNamespace

import pytest

from fibrepath.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, evaluate_formula, main
from fibrepath.experiments import builtin_scenarios
from fibrepath.geometry import RadiusProfile, TubeGeometry, WorldPointPair, world_function_taylor
from fibrepath.kernels import PhysicsConstants, classical_effective_potential, delta_v_eff_from_b


def _eval(capsys, *args):
    assert main(["eval", *args]) == EXIT_OK
    return capsys.readouterr().out.strip()


def test_eval_delta_v(capsys):
    assert _eval(capsys, "delta_v", "--profile", "exp:lambda=1", "--xi", "0", "--x", "0") == "0.125"


def test_eval_curvature_flat(capsys):
    assert _eval(capsys, "curvature", "--profile", "const:b=1", "--x", "0") == "0"


def test_eval_sigma_and_v_cl(capsys):
    assert float(_eval(capsys, "sigma", "--profile", "exp:lambda=1", "--dphi", "0.1")) == pytest.approx(
        (0.01 - 1e-4 / 12) / 2, rel=1e-11)
    assert float(_eval(capsys, "v_cl", "--profile", "const:b=2", "--e-phi", "4.5")) == 1.125
    assert float(_eval(capsys, "sigma", "--method", "geodesic", "--x-prime", "0.3", "--dphi", "0.4")) == \
        pytest.approx(0.125, abs=1e-10)


@pytest.mark.parametrize("profile, x, xi", [("tanh:amp=0.3,width=0.7", 0.37, 0.1),
                                            ("gaussian-bump:amp=0.4", -1.2, 0.25),
                                            ("exp:lambda=0.3", 2.0, 1 / 6)])
def test_eval_prints_library_value_to_twelve_digits(capsys, profile, x, xi):
    out = _eval(capsys, "delta_v", "--profile", profile, "--x", repr(x), "--xi", repr(xi))
    lib = float(delta_v_eff_from_b(TubeGeometry(RadiusProfile.parse(profile)), PhysicsConstants(xi=xi), x))
    assert out == f"{lib:.12g}"
    out = _eval(capsys, "v_cl", "--profile", profile, "--x", repr(x), "--k", "2", "--V0", "0.5*x**2")
    lib = float(classical_effective_potential(TubeGeometry(RadiusProfile.parse(profile)),
                                              PhysicsConstants(V0="0.5*x**2"), x, 2.0))
    assert out == f"{lib:.12g}"


def test_evaluate_formula_matches_geometry():
    ns = SimpleNamespace(formula="sigma", profile="tanh:amp=0.2", mass=1.0, hbar=1.0, xi=0.0, V0="0", d=1, x=0.1,
                         x_prime=0.4, dphi=0.3, winding=0, method="taylor", eta=0.0, k=0, e_phi=None)
    geom = TubeGeometry(RadiusProfile.parse("tanh:amp=0.2"))
    assert evaluate_formula(ns) == world_function_taylor(geom, WorldPointPair(0.1, 0.4, 0.3))


def test_eval_bad_profile_is_usage_error(capsys):
    assert main(["eval", "delta_v", "--profile", "spiral:a=1"]) == EXIT_USAGE


def test_list(capsys):
    assert main(["list", "--quiet"]) == EXIT_OK
    assert capsys.readouterr().out.split() == sorted(builtin_scenarios())


def test_validate_builtin_ok(capsys):
    assert main(["validate", "c05_brute_force", "c11_geometry"]) == EXIT_OK


def test_validate_names_violated_rule(tmp_path, capsys):
    data = json.loads(builtin_scenarios()["c02_flat_baseline"].read_text())
    data["grid"].update(n_x=32, dt=0.001)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    assert main(["validate", str(path)]) == EXIT_USAGE
    out = capsys.readouterr().out
    assert "grid-eps-compatibility" in out and "/grid" in out


def test_validate_reports_schema_pointer(tmp_path, capsys):
    data = json.loads(builtin_scenarios()["c02_flat_baseline"].read_text())
    data["grid"]["n_phi"] = -4
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    assert main(["validate", str(path)]) == EXIT_USAGE
    assert "/grid/n_phi" in capsys.readouterr().out


def test_unknown_scenario_is_usage_error(capsys):
    assert main(["run", "no_such_scenario"]) == EXIT_USAGE
    assert "unknown scenario" in capsys.readouterr().err
    assert main(["run", "missing.json"]) == EXIT_USAGE


def test_bad_arguments_are_usage_errors(capsys):
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["eval", "delta_v", "--x", "abc"]) == EXIT_USAGE
    assert main(["run"]) == EXIT_USAGE


def test_run_writes_reports(tmp_path, capsys):
    assert main(["run", "c11_geometry", "--out", str(tmp_path), "--quiet"]) == EXIT_OK
    report = json.loads((tmp_path / "c11_geometry" / "report.json").read_text())
    assert report["passed"] is True


def test_run_failure_exit_code(tmp_path, capsys):
    data = json.loads(builtin_scenarios()["c11_geometry"].read_text())
    data = copy.deepcopy(data)
    data["name"] = "impossible"
    data["checks"] = [{"metric": "symmetry_max", "op": "<", "value": 0.0}]
    path = tmp_path / "impossible.json"
    path.write_text(json.dumps(data))
    assert main(["run", str(path), "--out", str(tmp_path)]) == EXIT_FAIL
    assert "FAIL" in capsys.readouterr().out
