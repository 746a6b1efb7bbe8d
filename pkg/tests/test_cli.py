import io
import json
import subprocess
import sys

import pytest

from phi4rg import __version__
from phi4rg.cli import read_config, run_command, COMMANDS


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = run_command(argv, stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def test_exponents():
    code, out, _ = run(["exponents", "--n", "1"])
    assert code == 0
    assert json.loads(out)["gamma_log"]["exact"] == "1/3"


def test_critical_invariant_subspace():
    code, out, _ = run(["critical", "--n", "1", "--L", "2", "--m2", "1e-4", "--g0", "0.05",
                        "--toggle-driving", "off", "--tol", "1e-12"])
    assert code == 0
    assert abs(json.loads(out)["nu0c"]) <= 1e-12


def test_unknown_subcommand_is_usage_error(capsys):
    code, _, _ = run(["frobnicate"])
    assert code == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["critical", "--g0", "0.5"],
    ["flow", "--n", "x"],
    ["beta", "--jmin", "5", "--jmax", "2"],
    ["mcmc", "--side", "3"],
    ["bubble", "--m2", "0"],
    ["flow", "--toggle-driving", "maybe"],
])
def test_range_validation(argv):
    code, _, err = run(argv)
    assert code == 2 and "error" in err


def test_beta_csv_schema_and_digits():
    code, out, _ = run(["beta", "--m2", "1e-4", "--jmax", "3"])
    lines = out.splitlines()
    assert code == 0 and lines[0] == "j,b_j" and len(lines) == 5
    assert float(lines[1].split(",")[1]) == pytest.approx(0.028157185842069294, rel=1e-15)


def test_beta_momentum_backend_agrees():
    _, a, _ = run(["beta", "--m2", "1e-2", "--jmin", "1", "--jmax", "3"])
    _, b, _ = run(["beta", "--m2", "1e-2", "--jmin", "1", "--jmax", "3", "--backend", "momentum"])
    for la, lb in zip(a.splitlines()[1:], b.splitlines()[1:]):
        assert float(la.split(",")[1]) == pytest.approx(float(lb.split(",")[1]), rel=1e-8)


def test_flow_csv():
    code, out, _ = run(["flow", "--m2", "1e-4", "--g0", "0.03", "--nu0", "0.1"])
    assert code == 0 and out.splitlines()[0] == "j,g,mu,nu,nuprime"


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\nm2 = 1e-2   # inline comment\njmax = 2\n")
    code, out, _ = run(["beta", "--config", str(cfg)])
    assert code == 0 and len(out.splitlines()) == 4
    code, out, _ = run(["beta", "--config", str(cfg), "--jmax", "4"])
    assert len(out.splitlines()) == 6


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("m2 = 1e-2\ncolour = blue\n")
    code, _, err = run(["beta", "--config", str(cfg)])
    assert code == 2 and "unknown key" in err
    with pytest.raises(Exception):
        read_config(str(cfg), COMMANDS["beta"][1])


def test_out_with_sidecar_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["chi-curve", "--n", "1", "--g0", "0.03", "--m2-min", "1e-6", "--per-period", "1",
            "--precise", "off"]
    assert run(args + ["--out", str(a)])[0] == 0
    assert run(args + ["--out", str(b), "--workers", "2"])[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == "m2,nu0c,nu,eps,chi,dchidnu,Aeff,gammaeff"
    meta = json.loads((tmp_path / "a.csv.meta.json").read_text())
    assert meta["version"] == __version__ and meta["config"]["n"] == 1
    assert meta["wall_time_s"] >= 0


def test_computation_error_leaves_no_output(tmp_path):
    out = tmp_path / "c.csv"
    # a grid this narrow has fewer than four points
    code, _, err = run(["chi-curve", "--m2-max", "1e-4", "--m2-min", "5e-5", "--out", str(out)])
    assert code == 1 and "DomainError" in err
    assert not out.exists() and list(tmp_path.iterdir()) == []


def test_polymer_check_json():
    code, out, _ = run(["polymer-check", "--d", "1", "--side-L", "2", "--side-N", "2"])
    rep = json.loads(out)
    assert code == 0 and rep["passed"]


def test_mcmc_json():
    code, out, _ = run(["mcmc", "--side", "2", "--d", "2", "--sweeps", "2000", "--nu", "1.0"])
    rep = json.loads(out)
    assert code == 0 and rep["sweeps"] == 2000 and "stderr" in rep


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "phi4rg.cli", "exponents", "--n", "4"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["cH_regime"] == "loglog"
