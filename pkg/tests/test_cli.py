from __future__ import annotations

import json
import subprocess
import sys

import pytest

from perpint.cli import main
from perpint.rng import DEFAULT_SEED


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_classify_feller(capsys):
    code, out, _ = run(capsys, "classify", "--sigma", "sqrt(y)", "--drift", "0.25", "--f", "1/y")
    assert code == 0
    assert "InfiniteAS" in out


def test_classify_wright_fisher_right_boundary(capsys):
    code, out, _ = run(capsys, "classify", "--sigma", "sqrt(y*(1-y))", "--domain", "0,1",
                       "--f", "1/(1-y)", "--boundary", "right")
    assert code == 0 and "InfiniteAS" in out


def test_classify_fixation_criterion(capsys):
    code, out, _ = run(capsys, "classify", "--criterion", "fixation", "--sigma", "y^0.3", "--f", "y")
    assert code == 0 and "FiniteAS" in out


def test_missing_required_flag_is_a_config_error(capsys):
    code, _, err = run(capsys, "classify", "--f", "1/y")
    assert code == 2
    assert "--sigma" in err


def test_parse_error_reports_offset(capsys):
    code, _, err = run(capsys, "classify", "--sigma", "y^^2", "--f", "1")
    assert code == 2
    assert "ParseError" in err and "offset 3" in err


def test_inapplicable_criterion_exit_code(capsys):
    code, _, err = run(capsys, "classify", "--sigma", "sqrt(y)", "--drift", "0.5", "--f", "1/y")
    assert code == 3
    assert "inapplicable" in err


def test_inconclusive_verdict_exit_code(capsys):
    code, out, _ = run(capsys, "classify", "--sigma", "1", "--f", "1/(y^2*(1+log(y)^2))")
    assert code == 3 and "Inconclusive" in out


def test_boundary_and_moment_bound(capsys):
    code, out, _ = run(capsys, "boundary", "--sigma", "sqrt(y)", "--drift", "0.25")
    assert code == 0 and "true" in out.lower()
    code, out, _ = run(capsys, "moment-bound", "--sigma", "1", "--f", "min(1, max(0, 2-2*y))", "--n", "2")
    assert code == 0
    assert "0.58333" in out and "0.68055" in out


def test_simulate_writes_csv_and_complete_manifest(tmp_path, capsys):
    out = tmp_path / "path.csv"
    code, _, _ = run(capsys, "simulate", "1d", "--sigma", "sqrt(y*(1-y))", "--domain", "0,1",
                     "--x0", "0.4", "--f", "1/(1-y)", "--out", str(out), "--seed", "3")
    assert code == 0
    header = out.read_text().splitlines()[0]
    assert header == "t,y,int[1/(1-y)],absorbed"
    man = json.loads((tmp_path / "path.csv.manifest.json").read_text())
    assert man["status"] == "complete"
    assert man["seed"] == 3
    assert man["subcommand"].startswith("simulate")
    assert str(out) in man["outputs"]


def test_default_seed_is_recorded(tmp_path, capsys):
    out = tmp_path / "ma.csv"
    code, _, _ = run(capsys, "simulate", "multiallele", "--L", "3", "--x0", "0.2,0.3,0.5",
                     "--out", str(out))
    assert code == 0
    man = json.loads((tmp_path / "ma.csv.manifest.json").read_text())
    assert man["seed"] == DEFAULT_SEED


def test_coupled_simulation(tmp_path, capsys):
    out = tmp_path / "nx.csv"
    code, _, _ = run(capsys, "simulate", "coupled", "--eps", "0.4", "--out", str(out), "--seed", "1")
    assert code == 0
    assert out.read_text().splitlines()[0].startswith("t,N,X")


def test_config_file_supplies_defaults(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text("[common]\nseed = 41\n\n[experiment.martingale]\nn = 100\ndt = 0.01\n")
    out = tmp_path / "m.csv"
    code, _, _ = run(capsys, "experiment", "martingale", "--config", str(ini), "--out", str(out))
    assert code in (0, 5)
    man = json.loads((tmp_path / "m.csv.manifest.json").read_text())
    assert man["seed"] == 41
    assert man["config"]["n"] == 100
    # flags override the file
    code, _, _ = run(capsys, "experiment", "martingale", "--config", str(ini), "--out", str(out),
                     "--seed", "42")
    assert json.loads((tmp_path / "m.csv.manifest.json").read_text())["seed"] == 42


def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[experiment]\nwarp = 9\n")
    code, _, err = run(capsys, "experiment", "martingale", "--config", str(ini))
    assert code == 2 and "warp" in err


def test_too_few_paths_is_a_config_error(tmp_path, capsys):
    code, _, _ = run(capsys, "experiment", "martingale", "--n", "10", "--out", str(tmp_path / "x.csv"))
    assert code == 2


def test_experiment_csv_is_byte_identical_across_jobs(tmp_path, capsys):
    paths = []
    for jobs in ("1", "3"):
        out = tmp_path / f"fig2_{jobs}.csv"
        code, _, _ = run(capsys, "experiment", "figure2", "--n", "200", "--dt", "0.01",
                         "--seed", "17", "--jobs", jobs, "--out", str(out))
        assert code == 0
        paths.append(out)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "perpint", "classify", "--sigma", "1", "--f", "1"],
                         capture_output=True, text=True, timeout=120)
    assert res.returncode == 0
    assert "FiniteAS" in res.stdout


@pytest.mark.parametrize("argv", [["simulate"], ["experiment"], []])
def test_missing_subcommand(capsys, argv):
    code, _, _ = run(capsys, *argv)
    assert code == 2
