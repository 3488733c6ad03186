import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from qfilter.cli import run
from qfilter.model_io import read_records

MODELS = Path(__file__).resolve().parent.parent / "models"
VACUUM = str(MODELS / "vacuum_qubit.yaml")
THERMAL = str(MODELS / "thermal_qubit.yaml")

DECAY = """\
system:
  dim: 2
  hamiltonian: "0"
  couplings: [sigma_minus]
  initial_state: proj(0)
measurement:
  G: [[1]]
observables:
  pe: proj(0)
"""


def cli(*argv):
    return subprocess.run([sys.executable, "-m", "qfilter", *argv], capture_output=True)


@pytest.fixture
def write_model(tmp_path):
    def _write(text, name="model.yaml"):
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    return _write


def test_validate_thermal(capsys):
    assert run(["validate", "--model", THERMAL]) == 0
    out = capsys.readouterr().out
    assert "factorization" in out and "cond(W)" in out and "Sigma eigenvalues 1.5" in out
    assert "FAIL" not in out


def test_validate_positivity_violation(write_model, capsys):
    path = write_model(DECAY + "field: {n: 1, N: [[0.25]], M: [[0.6]]}\n")
    assert run(["validate", "--model", path]) == 3
    captured = capsys.readouterr()
    assert "F-positivity" in captured.out and "min eigenvalue" in captured.out


def test_missing_file_is_usage_error(tmp_path):
    assert run(["validate", "--model", str(tmp_path / "nope.yaml")]) == 2


def test_parse_error_exit(write_model):
    assert run(["validate", "--model", write_model("system: [")]) == 2
    assert run(["simulate", "--model", write_model(DECAY + "bogus: 1\n"), "--tmax", "1"]) == 2


def test_usage_errors(write_model):
    path = write_model(DECAY)
    assert run(["simulate", "--model", path, "--dt", "2", "--tmax", "1"]) == 2
    assert run(["simulate", "--model", path]) == 2  # no horizon anywhere
    assert run(["simulate", "--model", path, "--tmax", "1", "--dt", "-1"]) == 2
    assert run(["simulate", "--model", path, "--tmax", "1", "--format", "xml"]) == 2
    assert run(["ensemble", "--model", path, "--tmax", "1", "--trajectories", "1"]) == 2
    assert run(["simulate", "--model", path, "--tmax", "1", "--snapshots", "0.00005"]) == 2
    assert run(["frobnicate"]) == 2


def test_validation_error_exit(write_model):
    path = write_model(DECAY.replace("G: [[1]]", "G: [[0]]"))
    assert run(["simulate", "--model", path, "--tmax", "1"]) == 3


def test_integration_error_exit(write_model, capsys):
    # with a huge Hamiltonian roundoff in the explicit step destroys the trace
    path = write_model(DECAY.replace('hamiltonian: "0"', 'hamiltonian: "1e20*sigma_x"'))
    assert run(["simulate", "--model", path, "--tmax", "0.01", "--dt", "0.001"]) == 4
    assert re.search(r"step \d+", capsys.readouterr().err)


def test_simulate_rows_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["simulate", "--model", VACUUM, "--tmax", "5", "--dt", "1e-3", "--seed", "7"]
    r1 = cli(*args, "--output", str(a))
    r2 = cli(*args, "--output", str(b))
    assert r1.returncode == 0 and r2.returncode == 0
    assert r1.stdout == b"" and r2.stdout == b""
    assert a.read_bytes() == b.read_bytes()
    meta, cols = read_records(a.read_bytes(), "csv")
    assert len(cols["t"]) == 5001


def test_stdout_when_no_output(capsysbinary):
    assert run(["simulate", "--model", VACUUM, "--tmax", "0.01", "--format", "json", "--quiet"]) == 0
    rec = read_records(capsysbinary.readouterr().out)
    assert rec.dY.shape == (11, 1)


def test_precedence(tmp_path, write_model):
    path = write_model(DECAY + "simulation: {T: 0.02, dt: 0.002, seed: 4}\n")
    out = tmp_path / "r.json"
    assert run(["simulate", "--model", path, "--output", str(out), "--format", "json", "--quiet"]) == 0
    rec = read_records(out.read_bytes())
    assert rec.dt == 0.002 and rec.seed == 4 and rec.times[-1] == pytest.approx(0.02)
    assert run(["simulate", "--model", path, "--dt", "0.001", "--seed", "9", "--output", str(out), "--format", "json"]) == 0
    rec = read_records(out.read_bytes())
    assert rec.dt == 0.001 and rec.seed == 9


def test_master_exponential_decay(tmp_path, write_model):
    out = tmp_path / "m.csv"
    assert run(["master", "--model", write_model(DECAY), "--tmax", "5", "--output", str(out)]) == 0
    _, cols = read_records(out.read_bytes(), "csv")
    assert np.max(np.abs(cols["pe_re"] - np.exp(-cols["t"]))) < 1e-8


def test_master_dark_state_constant(tmp_path, write_model):
    out = tmp_path / "m.csv"
    path = write_model(DECAY.replace("initial_state: proj(0)", "initial_state: proj(1)"))
    assert run(["master", "--model", path, "--tmax", "1", "--output", str(out)]) == 0
    _, cols = read_records(out.read_bytes(), "csv")
    assert np.all(cols["pe_re"] == 0)


def test_master_thermal_steady_state(tmp_path):
    out = tmp_path / "m.csv"
    assert run(["master", "--model", THERMAL, "--tmax", "40", "--dt", "0.01", "--output", str(out)]) == 0
    _, cols = read_records(out.read_bytes(), "csv")
    assert abs(cols["pe_re"][-1] - 0.25 / 1.5) < 1e-6


def test_ensemble_report_columns(tmp_path):
    out = tmp_path / "e.csv"
    args = ["ensemble", "--model", VACUUM, "--tmax", "0.5", "--trajectories", "50", "--output", str(out)]
    assert run(args) == 0
    first = out.read_bytes()
    text = first.decode().splitlines()
    header = [line for line in text if not line.startswith("#")][0].split(",")
    assert "max_deviation" in header and "mc_se" in header and "pe_se_re" in header
    assert any(line.startswith("# nu_final_mean=") for line in text)
    assert run(args) == 0
    assert out.read_bytes() == first


@pytest.mark.slow
def test_thermal_ensemble_final_population(tmp_path):
    """A long thermal run ends near p_e = 1/6 within Monte Carlo error."""
    out = tmp_path / "e.csv"
    args = ["ensemble", "--model", THERMAL, "--tmax", "10", "--dt", "0.002", "--trajectories", "1000", "--quiet"]
    assert run(args + ["--output", str(out)]) == 0
    _, cols = read_records(out.read_bytes(), "csv")
    assert abs(cols["pe_re"][-1] - 1 / 6) <= 4 * cols["pe_se_re"][-1]
