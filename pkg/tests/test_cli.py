import json
import subprocess
import sys

import pytest

from dktransform import __version__
from dktransform.cli import EXIT_FAIL, EXIT_INVALID, EXIT_PASS, main
from dktransform.scenario import bundled_scenario_path


def write(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def coulomb_doc():
    return json.loads(bundled_scenario_path("coulomb_oscillator").read_text())


def test_bundled_scenario_runs(tmp_path, capsys):
    assert main(["run", "coulomb_oscillator", "--output-dir", str(tmp_path)]) == EXIT_PASS
    out = capsys.readouterr().out
    assert "overall: PASS" in out
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == [
        "coulomb_oscillator_00_correspondence.csv",
        "coulomb_oscillator_01_geometry-audit.csv",
        "coulomb_oscillator_02_spectra.csv",
        "coulomb_oscillator_03_resolvent.csv",
        "coulomb_oscillator_report.txt",
        "coulomb_oscillator_summary.json",
    ]
    summary = json.loads((tmp_path / "coulomb_oscillator_summary.json").read_text())
    assert summary["conventions"]["conformal_exponent"] == -1
    assert summary["version"] == __version__


def test_runs_are_bit_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["run", "coulomb_oscillator", "--output-dir", str(d), "--seed", "7"]) == EXIT_PASS
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_validate(tmp_path, capsys):
    assert main(["validate", str(bundled_scenario_path("coulomb_oscillator"))]) == EXIT_PASS
    assert "valid scenario" in capsys.readouterr().out


def test_invalid_scenario_writes_nothing(tmp_path, capsys):
    doc = coulomb_doc()
    doc["transform"]["time_scale"] = "-Q1"
    out = tmp_path / "out"
    assert main(["run", str(write(tmp_path, doc)), "--output-dir", str(out)]) == EXIT_INVALID
    assert not out.exists()
    assert "transform.time_scale" in capsys.readouterr().err


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["validate", str(path)]) == EXIT_INVALID


def test_missing_file(tmp_path):
    assert main(["validate", str(tmp_path / "nope.json")]) == EXIT_INVALID


def test_threshold_failure_exit_code(tmp_path):
    doc = coulomb_doc()
    doc["transform"]["conformal_exponent"] = -1
    doc["experiments"] = [dict(doc["experiments"][3], prefactor_exponent=0.0, refine=False)]
    assert main(["run", str(write(tmp_path, doc)), "--output-dir", str(tmp_path / "out")]) == EXIT_FAIL


def test_tolerance_scale_tightens_thresholds(tmp_path):
    doc = coulomb_doc()
    doc["transform"]["conformal_exponent"] = -1
    doc["experiments"] = [doc["experiments"][2]]
    path = write(tmp_path, doc)
    assert main(["run", str(path), "--output-dir", str(tmp_path / "a")]) == EXIT_PASS
    assert main(["run", str(path), "--output-dir", str(tmp_path / "b"), "--tolerance-scale", "1e-3"]) == EXIT_FAIL


def test_grid_scale_changes_grid(tmp_path):
    doc = coulomb_doc()
    doc["transform"]["conformal_exponent"] = -1
    doc["experiments"] = [doc["experiments"][2]]
    assert main(["run", str(write(tmp_path, doc)), "--output-dir", str(tmp_path / "o"), "--grid-scale", "2"]) == EXIT_PASS
    summary = json.loads((tmp_path / "o" / "coulomb_oscillator_summary.json").read_text())
    assert summary["experiments"][0]["grids"]["grid_i"]["n"] == 8000
    assert summary["grid_scale"] == 2.0


def test_non_positive_scale_is_rejected(tmp_path):
    assert main(["run", "coulomb_oscillator", "--output-dir", str(tmp_path), "--grid-scale", "0"]) == EXIT_INVALID


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "dktransform", "validate", "coulomb_oscillator"], capture_output=True, text=True, check=False
    )
    assert proc.returncode == 0, proc.stderr
