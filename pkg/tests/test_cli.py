import csv
import hashlib
import json

import numpy as np
import pytest

from aacoords.cli import main


def run(tmp_path, *argv):
    out = tmp_path / "out"
    code = main([*argv, "--out", str(out)])
    return code, out


def load(path):
    return json.loads(path.read_text())


def test_validate_so3(tmp_path):
    code, out = run(tmp_path, "validate", "--builtin", "so3_rigid_body")
    assert code == 0
    rep = load(out / "validation.json")
    assert rep["poisson"]["passed"] and rep["integrability"]["passed"]


def test_validate_cjl(tmp_path):
    code, _ = run(tmp_path, "validate", "--builtin", "cjl_counterexample")
    assert code == 0


def test_validate_failing_seed_exits_1(tmp_path):
    code, out = run(tmp_path, "validate", "--builtin", "so3_rigid_body", "--seed", "0,0,0")
    assert code == 1
    rep = load(out / "validation.json")
    assert not rep["integrability"]["passed"]


@pytest.mark.parametrize("doc", [
    "coordinates: [q]\n",
    "{not yaml",
    '{"dimension": 2, "coordinates": ["q", "p"], "functions": [{"name": "H", "expr": "q^"}],'
    ' "rank": 1, "kind": "commutative", "domain_box": {"lo": [0, 0], "hi": [1, 1]}, "seed": [0, 0]}',
])
def test_malformed_document_exits_2(tmp_path, doc):
    path = tmp_path / "doc.yaml"
    path.write_text(doc)
    code, out = run(tmp_path, "validate", "--input", str(path))
    assert code == 2
    assert load(out / "manifest.json")["exit_code"] == 2


def test_input_errors_exit_2(tmp_path):
    assert run(tmp_path, "validate", "--builtin", "nope")[0] == 2
    assert run(tmp_path, "validate")[0] == 2
    assert run(tmp_path, "validate", "--builtin", "harmonic1d", "--seed", "1,2,3")[0] == 2
    assert run(tmp_path, "flow", "--builtin", "harmonic1d", "--function", "Q")[0] == 2


def test_flow_csv(tmp_path):
    code, out = run(tmp_path, "flow", "--builtin", "harmonic1d", "--time", str(np.pi / 2),
                    "--steps", "4")
    assert code == 0
    rows = list(csv.reader((out / "flow.csv").open()))
    assert rows[0] == ["t", "q", "p"] and len(rows) == 6
    np.testing.assert_allclose([float(v) for v in rows[-1][1:]], [0, -1], atol=1e-8)
    assert load(out / "flow_report.json")["drift"] < 1e-9


def test_periods_harmonic(tmp_path):
    code, out = run(tmp_path, "periods", "--builtin", "harmonic1d", "--grid", "11")
    assert code == 0
    rows = list(csv.DictReader((out / "lattice.csv").open()))
    assert len(rows) == 11
    for row in rows:
        assert float(row["lambda1_H"]) == pytest.approx(6.283185, abs=1e-6)


def test_periods_unitfreq_is_deterministic(tmp_path):
    code1, out1 = run(tmp_path / "a", "periods", "--builtin", "unitfreq1d")
    code2, out2 = run(tmp_path / "b", "periods", "--builtin", "unitfreq1d")
    assert code1 == code2 == 0
    a, b = (out1 / "lattice.csv").read_bytes(), (out2 / "lattice.csv").read_bytes()
    assert a == b
    for row in csv.DictReader((out1 / "lattice.csv").open()):
        assert float(row["lambda1_H"]) == pytest.approx(1.0, abs=1e-9)


def test_periods_cjl_fails_with_diagnostic(tmp_path):
    code, out = run(tmp_path, "periods", "--builtin", "cjl_counterexample")
    assert code == 1
    fail = load(out / "periods_failure.json")
    assert "non-compact" in fail["diagnostic"]
    assert not (out / "lattice.csv").exists()


def test_manifest(tmp_path):
    code, out = run(tmp_path, "validate", "--builtin", "harmonic1d")
    man = load(out / "manifest.json")
    from aacoords.systems import builtin, serialize

    digest = hashlib.sha256(serialize(builtin("harmonic1d")).encode()).hexdigest()
    assert man["input_sha256"] == digest
    assert man["exit_code"] == code == 0
    assert [s["stage"] for s in man["stages"]] == ["validate"]
    assert man["config"]["builtin"] == "harmonic1d"
    assert str(out / "validation.json") in man["outputs"]


def test_actions_so3(tmp_path):
    code, out = run(tmp_path, "actions", "--builtin", "so3_rigid_body")
    assert code == 0
    rep = load(out / "actions_report.json")
    assert rep["passed"] and rep["closedness"]["relative"] < 1e-3


def test_chart_harmonic(tmp_path):
    code, out = run(tmp_path, "chart", "--builtin", "harmonic1d", "--samples-chart", "20")
    assert code == 0
    rep = load(out / "chart_report.json")
    assert rep["residuals"]["theta_p"]["max"] < 1e-5


def test_chart_oscillator_straightened(tmp_path):
    code, out = run(tmp_path, "chart", "--builtin", "oscillator2d", "--straighten",
                    "--samples-chart", "10")
    assert code == 0
    assert load(out / "chart_report.json")["residuals"]["theta_theta"]["max"] < 1e-4


def test_chart_noncommutative(tmp_path):
    code, out = run(tmp_path, "chart", "--builtin", "isotropic2d_nc", "--samples-chart", "10")
    assert code == 0
    rep = load(out / "chart_report.json")
    assert "theta_z" in rep["diagnostics"]
    assert "theta_z" not in rep["thresholds"]


def test_verify_so3(tmp_path):
    code, out = run(tmp_path, "verify", "--builtin", "so3_rigid_body", "--samples-chart", "10",
                    "--samples-torus", "5")
    assert code == 0
    rep = load(out / "verify_report.json")
    assert rep["period_one_defect"] < 1e-6 and rep["schouten_residual"] < 1e-4
