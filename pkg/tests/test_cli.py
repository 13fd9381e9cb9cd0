import json
import os
import subprocess
import sys

import pytest

from hypclass.cli import SymbolFileError, load_builtin, main, parse_symbol_file

GOOD = """\
# rei2 written out by hand
[header]
n = 3
r = 2
[params]
k = 3
[phi]
xi1
(x0 + x1 - x0*x2^k/k)*xin
xi2
[region]
samples = 20
seed = 5
"""


def run_json(capsys, *argv):
    code = main([*argv, "--json"])
    return code, json.loads(capsys.readouterr().out)


def test_parse_symbol_file():
    ld = parse_symbol_file(GOOD)
    assert ld.system.n == 3 and ld.system.d == 3
    assert ld.region.samples == 20 and ld.region.seed == 5


def test_malformed_phi_reports_line_and_column():
    bad = GOOD.replace("(x0 + x1 - x0*x2^k/k)*xin", "(x0 + x1 - x0*x2^k/k)*xin + nu")
    with pytest.raises(SymbolFileError) as err:
        parse_symbol_file(bad)
    assert err.value.line == 9
    assert err.value.column == 29
    assert "nu" in str(err.value)


@pytest.mark.parametrize("text,line", [
    ("[phi]\nxi1\n", None),
    ("[header]\nn = 3\n[phi]\nxi1\n[bogus]\n", 5),
    ("n = 3\n", 1),
    ("[header]\nn = three\n[phi]\nxi1\n", 2),
])
def test_symbol_file_errors(text, line):
    with pytest.raises(SymbolFileError) as err:
        parse_symbol_file(text)
    assert err.value.line == line


def test_builtins_resolve():
    assert load_builtin("rei2 k=3").system.d == 3
    ld = load_builtin("rei3 k=1 nu=0")
    assert ld.system.d == 2 and "nu" in ld.system.extras
    with pytest.raises(ValueError):
        load_builtin("rei9")


def test_file_and_builtin_agree(tmp_path, capsys):
    path = tmp_path / "rei2.sym"
    path.write_text(GOOD)
    code, rep = run_json(capsys, "sweep", "--file", str(path))
    assert code == 0
    labels = [b["label"] for b in rep["sweep"]["bands"]]
    assert labels == ["effective", "type2", "type1"]


def test_transition_command(capsys):
    code, rep = run_json(capsys, "transition", "rei3", "k=1", "nu=0")
    assert code == 0
    tr = rep["transition"]
    assert tr["kappa"] == pytest.approx(1.0, abs=1e-8)
    assert tr["nu"] == pytest.approx(0.0, abs=1e-12)
    assert tr["exists_tangent"] is True


def test_sweep_bands(capsys):
    code, rep = run_json(capsys, "sweep", "rei2", "k=3")
    assert code == 0
    bands = rep["sweep"]["bands"]
    assert [b["label"] for b in bands] == ["effective", "type2", "type1"]
    assert bands[1]["from"] == 0.0 and bands[1]["to"] == 0.0


def test_classify_and_normal_form(capsys):
    assert run_json(capsys, "classify", "rei2", "k=3")[0] == 0
    code, rep = run_json(capsys, "normal-form", "rei2n", "k=3")
    assert code == 0 and rep["normal_form"]["certificate"]["verdict"] is True


def test_factorize_verdicts(capsys):
    code, rep = run_json(capsys, "factorize", "rei3", "k=2", "nu=x2^2")
    assert code == 0
    assert rep["factorize"]["factorization"]["verdict"] == "factorizes"
    _, rep = run_json(capsys, "factorize", "rei3", "k=1", "nu=0")
    assert rep["factorize"]["factorization"]["verdict"] == "no factorization"


def test_flow_csv(capsys):
    assert main(["flow", "rei3", "k=1", "nu=0", "--csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split(",")[:3] == ["s", "t", "x0"]
    assert {"phi1", "phi2", "theta", "p"} <= set(lines[0].split(","))
    assert len(lines) > 10


def test_out_directory(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["flow", "rei3", "k=1", "nu=0", "--out", str(out)]) == 0
    capsys.readouterr()
    assert {"report.json", "report.txt", "trajectory.csv"} <= set(os.listdir(out))
    rep = json.loads((out / "report.json").read_text())
    assert rep["command"] == "flow"


def test_exit_codes(tmp_path, capsys):
    path = tmp_path / "bad.sym"
    path.write_text(GOOD.replace("xi2\n", "xi2 +\n"))
    assert main(["classify", "--file", str(path)]) == 2
    # transition on a point without a real b root is a module error
    assert main(["flow", "rei3", "k=1", "nu=0.15*x0^2"]) == 1
    capsys.readouterr()


def test_reports_are_deterministic(capsys):
    a = run_json(capsys, "classify", "rei2", "k=3", "--seed", "3")[1]
    b = run_json(capsys, "classify", "rei2", "k=3", "--seed", "3")[1]
    assert a == b
    c = run_json(capsys, "classify", "rei2", "k=3", "--seed", "4")[1]
    assert c["input_digest"] != a["input_digest"]


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "hypclass.cli", "transition", "rei3", "k=1"],
                         capture_output=True, text=True, check=False)
    assert out.returncode == 0
    assert "kappa" in out.stdout
