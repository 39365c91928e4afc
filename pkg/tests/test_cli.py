import json
import subprocess
import sys

import numpy as np
import pytest

from fnhydro import __version__
from fnhydro.cli import main
from fnhydro.manifest import emit_examples


@pytest.fixture(scope="module")
def manifests(tmp_path_factory):
    d = tmp_path_factory.mktemp("manifests")
    emit_examples(d)
    return d


def write(tmp_path, doc, name="m.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def report(out, command):
    return json.loads((out / f"{command}-report.json").read_text())


TRACE_K2 = {
    "schema": 1, "dim": 2, "coordinates": ["x1", "x2"],
    "tensors": {"N": [["x1", "0"], ["0", "x2"]]},
    "scalars": {"a0": "x1 + x2"},
    "chains": {"c": {"kind": "lm", "N": "N", "a0": "a0", "K": 2}},
}


def test_torsion_identity_is_zero(manifests, tmp_path):
    code = main(["torsion", str(manifests / "identity.json"), "--out", str(tmp_path)])
    assert code == 0
    rep = report(tmp_path, "torsion")
    assert rep["status"] == "ok" and rep["exit_code"] == 0
    assert all(r["value"] == 0.0 for r in rep["results"])
    assert rep["version"] == __version__


def test_chain_lm_values(tmp_path):
    code = main(["chain", "lm", write(tmp_path, TRACE_K2), "--out", str(tmp_path), "--lattice", "4"])
    assert code == 0
    entry = report(tmp_path, "chain")["results"][0]
    pts = np.array(entry["lattice"])
    assert entry["provenance"][1] == "ray-ode"
    assert np.max(np.abs(np.array(entry["a"]["1"]) + pts[:, 0] * pts[:, 1])) <= 1e-8
    assert (tmp_path / "chain-c.json").exists()


def test_chain_kind_missing_is_manifest_error(manifests, tmp_path):
    assert main(["chain", "lm", str(manifests / "nilpotent-control.json"), "--out", str(tmp_path)]) == 2


@pytest.mark.filterwarnings("ignore:conservation pair is not certified")
def test_verify_diagonal_manifest(manifests, tmp_path):
    code = main(["verify", str(manifests / "diagonal-2d.json"), "--out", str(tmp_path)])
    assert code == 0
    rep = report(tmp_path, "verify")
    labels = {r["check"]: r for r in rep["results"]}
    for k in range(1, 5):
        assert labels[f"H(M_{k}) [trace]"]["passed"]
        assert labels[f"H(M_{k}) [trace]"]["value"] <= 1e-8
    assert any(r["group"] == "acceptance" for r in rep["results"])
    assert all(r["passed"] for r in rep["results"])


@pytest.mark.parametrize("name", ["diagonal-3d", "incompatible-control", "nilpotent-control", "identity"])
def test_verify_example_expectations(manifests, tmp_path, name):
    assert main(["verify", str(manifests / f"{name}.json"), "--manifest-only", "--out", str(tmp_path)]) == 0


def test_residual_failure_exit_1(tmp_path):
    doc = dict(TRACE_K2, tensors={"N": [["x2", "0"], ["0", "x1"]]}, chains={})
    assert main(["torsion", write(tmp_path, doc), "--out", str(tmp_path)]) == 1
    assert report(tmp_path, "torsion")["status"] == "residual-failure"


def test_manifest_error_exit_2(tmp_path):
    path = write(tmp_path, dict(TRACE_K2, schema=7))
    assert main(["torsion", path, "--out", str(tmp_path)]) == 2
    rep = report(tmp_path, "torsion")
    assert rep["status"] == "manifest-error" and "schema" in rep["error"]


def test_computation_error_exit_3(tmp_path):
    doc = dict(TRACE_K2, scalars={"a0": "x1*x2"})
    assert main(["chain", "lm", write(tmp_path, doc), "--out", str(tmp_path)]) == 3
    rep = report(tmp_path, "chain")
    assert rep["status"] == "computation-error" and "SeedConditionError" in rep["error"]


def test_settings_precedence(tmp_path):
    path = write(tmp_path, dict(TRACE_K2, seed=11))
    main(["torsion", path, "--out", str(tmp_path)])
    rep = report(tmp_path, "torsion")
    assert rep["seed"] == 11 and rep["sources"]["seed"] == "manifest"
    assert rep["sources"]["samples"] == "default"
    main(["torsion", path, "--seed", "5", "--tol", "1e-6", "--out", str(tmp_path)])
    rep = report(tmp_path, "torsion")
    assert rep["seed"] == 5 and rep["sources"]["seed"] == "flag"
    assert rep["tolerances"]["residual"] == 1e-6 and rep["sources"]["tolerances"] == "flag"


def test_reports_are_bit_identical(manifests, tmp_path):
    texts = []
    for i in range(2):
        out = tmp_path / str(i)
        main(["haantjes", str(manifests / "diagonal-2d.json"), "--out", str(out)])
        texts.append((out / "haantjes-report.json").read_text())
    assert texts[0] == texts[1]


def test_simulate_writes_csv(manifests, tmp_path):
    assert main(["simulate", str(manifests / "diagonal-2d.json"), "--out", str(tmp_path)]) == 0
    csvs = list(tmp_path.glob("*.csv"))
    assert csvs and csvs[0].read_text().startswith("t,y,x1,x2\n")


def test_commute_and_conserve(manifests, tmp_path):
    path = str(manifests / "diagonal-3d.json")
    assert main(["commute", path, "--out", str(tmp_path)]) == 0
    assert main(["conserve", path, "--out", str(tmp_path)]) == 0
    rep = report(tmp_path, "conserve")
    assert all("ratios" in r or "residual" in r for r in rep["results"])


def test_emit_examples_command(tmp_path, capsys):
    assert main(["emit-examples", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("*.json"))) == 5


def test_console_entry_point(manifests, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fnhydro.cli", "torsion", str(manifests / "identity.json"),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "report:" in proc.stdout
