import copy
import json
import math

import numpy as np
import pytest

from fibrepath import experiments
from fibrepath.experiments import (ExperimentSpec, SpecValidationError, builtin_scenarios, compare_fields,
                                   evaluate_checks, load_builtin, resolve_defaults, run, validate)
from fibrepath.spectral import GridMismatchError, WaveField

FLAT_ORACLE = {
    "name": "flat_oracle",
    "kind": "oracle_compare",
    "profile": {"kind": "constant"},
    "k": 2,
    "grid": {"domain": [-12.0, 12.0], "n_x": 256, "n_phi": 8, "dt": 0.01, "T": 0.5},
    "packet": {"x0": 0.0, "sigma": 1.0, "p0": 0.5},
    "checks": [
        {"metric": "l2_with_delta_v", "op": "<", "value": 1e-6},
        {"metric": "max_abs_delta_v", "op": "<", "value": 1e-6},
    ],
}

XI_SCAN = {
    "name": "xi_small",
    "kind": "xi_scan",
    "params": {
        "profiles": [{"kind": "exponential", "parameters": {"lambda": 0.5}}, {"kind": "tanh-step"}],
        "xi": [0.0, 1 / 6, 0.25, 1 / 3],
        "d": [1],
        "cell_scale": [1.0],
        "n_points": 21,
    },
    "checks": [{"metric": "max_abs_difference", "op": "<", "value": 1e-12}],
}


# -- field comparison -----------------------------------------------------------------------

def test_compare_identical_is_zero():
    x = np.linspace(-1, 1, 11)
    f = WaveField(x, np.exp(1j * x))
    assert compare_fields(f, f) == 0.0
    assert compare_fields(f, f, norm="Linf") == 0.0


def test_compare_double_is_one():
    x = np.linspace(-1, 1, 11)
    f = WaveField(x, np.exp(-x * x) * (1 + 0.5j))
    assert compare_fields(f, f.with_values(2 * f.values)) == pytest.approx(1.0, rel=1e-15)


def test_compare_hand_computed_pair():
    a = np.array([1.0, 2j, -1.0])
    b = np.array([1.0, 0.0, 1.0])
    # diff = (0, 2i, -2): ||diff|| = sqrt(8), ||a|| = sqrt(6)
    assert compare_fields(a, b) == pytest.approx(math.sqrt(8 / 6), rel=1e-15)
    assert compare_fields(a, b, relative=False) == pytest.approx(math.sqrt(8), rel=1e-15)
    assert compare_fields(a, b, norm="Linf") == pytest.approx(1.0)


def test_compare_grid_mismatch():
    with pytest.raises(GridMismatchError):
        compare_fields(WaveField(np.linspace(0, 1, 5), np.ones(5)), WaveField(np.linspace(0, 2, 5), np.ones(5)))
    with pytest.raises(GridMismatchError):
        compare_fields(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        compare_fields(np.ones(3), np.ones(3), norm="L1")


# -- validation ------------------------------------------------------------------------------

def _issues(data):
    return {(i.pointer, i.rule) for i in validate(data)}


@pytest.mark.parametrize("name", sorted(builtin_scenarios()))
def test_builtin_scenarios_validate(name):
    data = json.loads(builtin_scenarios()[name].read_text())
    assert validate(data) == []
    assert data["name"] == name


def test_schema_errors_carry_pointers():
    bad = copy.deepcopy(FLAT_ORACLE)
    bad["grid"]["n_x"] = "many"
    bad["extra"] = 1
    issues = _issues(bad)
    assert ("/grid/n_x", "schema") in issues
    assert ("", "schema") in issues


def test_unknown_kind_rejected():
    bad = dict(FLAT_ORACLE, kind="teleport")
    assert ("/kind", "schema") in _issues(bad)


def test_grid_eps_rule():
    bad = copy.deepcopy(FLAT_ORACLE)
    bad["grid"].update(n_x=16, dt=0.001)
    assert ("/grid", "grid-eps-compatibility") in _issues(bad)


def test_boundary_width_rule():
    bad = copy.deepcopy(FLAT_ORACLE)
    bad["packet"]["x0"] = 9.0
    assert ("/packet", "boundary-width") in _issues(bad)


def test_step_count_and_domain_rules():
    bad = copy.deepcopy(FLAT_ORACLE)
    bad["grid"]["T"] = 0.505
    assert ("/grid/dt", "step-count") in _issues(bad)
    bad = copy.deepcopy(FLAT_ORACLE)
    bad["grid"]["domain"] = [1.0, -1.0]
    assert ("/grid/domain", "domain-order") in _issues(bad)


def test_path_budget_and_eta_range_rules():
    data = json.loads(builtin_scenarios()["c10_history"].read_text())
    data["params"]["budget"] = 1000
    data["history"]["eta_range"] = [-0.1, 0.1]
    issues = _issues(data)
    assert ("/params/budget", "path-budget") in issues
    assert ("/history/eta_range", "eta-range") in issues


def test_bad_expression_rule():
    bad = dict(FLAT_ORACLE, V0="exp(x)")
    assert ("/V0", "expression") in _issues(bad)


def test_from_dict_raises_with_issues():
    bad = copy.deepcopy(FLAT_ORACLE)
    bad["packet"]["x0"] = 11.0
    with pytest.raises(SpecValidationError) as info:
        ExperimentSpec.from_dict(bad)
    assert info.value.issues[0].rule == "boundary-width"


def test_defaults_are_resolved_in_config():
    cfg = resolve_defaults({"name": "n", "kind": "xi_scan", "checks": [], "grid": {"n_x": 64}})
    assert cfg["grid"]["n_x"] == 64
    assert cfg["grid"]["n_phi"] == experiments.DEFAULTS["grid"]["n_phi"]
    assert cfg["constants"] == experiments.DEFAULTS["constants"]


# -- running ------------------------------------------------------------------------------------

def test_flat_oracle_compare_passes(tmp_path):
    report = run(ExperimentSpec.from_dict(FLAT_ORACLE), tmp_path)
    assert report.error is None
    assert report.passed
    assert report.metrics["max_abs_delta_v"] == 0.0
    saved = json.loads((tmp_path / "flat_oracle" / "report.json").read_text())
    assert saved["spec"]["grid"]["n_phi"] == 8
    assert saved["passed"] is True


def test_xi_scan_passes():
    report = run(ExperimentSpec.from_dict(XI_SCAN))
    assert report.passed
    assert report.metrics["cases"] == 8


def test_runs_are_byte_identical(tmp_path):
    spec = load_builtin("c06_kernel_order")
    run(spec, tmp_path / "a")
    run(spec, tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a" / spec.name).glob("*.csv"))
    assert files
    for name in files:
        assert (tmp_path / "a" / spec.name / name).read_bytes() == (tmp_path / "b" / spec.name / name).read_bytes()


def test_error_keeps_partial_results(tmp_path, monkeypatch):
    def broken(spec, metrics, tables):
        metrics["max_abs_difference"] = 0.0
        tables["partial"] = experiments.Table(["a"], [[1.0]])
        raise FloatingPointError("boom")

    monkeypatch.setitem(experiments.RUNNERS, "xi_scan", broken)
    report = run(ExperimentSpec.from_dict(XI_SCAN), tmp_path)
    assert "xi_small (xi_scan)" in report.error and "boom" in report.error
    assert report.metrics == {"max_abs_difference": 0.0}
    assert (tmp_path / "xi_small" / "partial.csv").exists()
    assert not report.passed


def test_checks_fail_on_missing_or_nan_metrics():
    checks = [{"metric": "a", "op": "<", "value": 1.0}, {"metric": "b", "op": "<", "value": 1.0},
              {"metric": "c", "op": ">=", "value": 1.0}]
    res = evaluate_checks(checks, {"b": float("nan"), "c": 1.0})
    assert [r.passed for r in res] == [False, False, True]
    assert res[0].observed is None


def test_report_json_replaces_nan():
    report = experiments.ExperimentReport({"name": "x", "kind": "xi_scan"}, {"m": float("nan")}, [], [], 0.0)
    assert report.to_dict()["metrics"]["m"] is None
