import csv
import subprocess
import sys

import pytest

from activesampling.cli import main


def test_generate_and_pilot(tmp_path, capsys):
    out = tmp_path / "d.csv"
    assert main(["generate-data", "--sigma", "1", "--r2", "0.5", "--n", "50", "--seed", "2", "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 50 and set(rows[0]) == {"i", "z", "y", "p"}
    capsys.readouterr()
    assert main(["pilot", "--data", str(out), "--delta", "0.1"]) == 0
    # unit sample variance by construction
    assert capsys.readouterr().out.strip() == "100"


def test_run_experiment_with_flags(tmp_path):
    out = tmp_path / "r.csv"
    code = main(["run-experiment", "--method", "SRS-linear,AS", "--replications", "3",
                 "--n-max", "20", "--out", str(out)])
    assert code == 0
    header = out.read_text().splitlines()[0]
    assert header == "method,scenario,sigma,r2,estimator,batch_size,n,m_reps,ermse,ermse_se,coverage,seed"
    assert (tmp_path / "r.csv.meta.json").exists()


def test_coverage_from_config_file(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# coverage run\nmethod=SRS-linear\nreplications=4\nn_max=20\nvariance_methods=design,martingale\n")
    out = tmp_path / "cov.csv"
    assert main(["coverage", "--config", str(cfg), "--out", str(out)]) == 0
    with open(out) as fh:
        est = {r["estimator"] for r in csv.DictReader(fh)}
    assert est == {"linear|design", "linear|martingale"}


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("wat=1\n")
    out = str(tmp_path / "x.csv")
    assert main(["run-experiment", "--config", str(bad), "--out", out]) == 2
    assert main(["run-experiment", "--config", str(tmp_path / "missing.txt"), "--out", out]) == 2
    assert main(["pilot", "--data", out]) == 2
    assert main(["generate-data", "--r2", "1.5", "--out", out]) == 2
    assert main(["run-experiment", "--method", "Leverage", "--replications", "2", "--n-max", "10",
                 "--out", out]) == 3


def test_module_entry_point(tmp_path):
    out = tmp_path / "d.csv"
    proc = subprocess.run([sys.executable, "-m", "activesampling", "generate-data", "--n", "10", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()


def test_oracle_failure_exit_code(monkeypatch, tmp_path):
    from activesampling import cli
    from activesampling.errors import OracleFailure

    def boom(args):
        raise OracleFailure("simulator unreachable")

    monkeypatch.setitem(cli.COMMANDS, "run-experiment", boom)
    assert main(["run-experiment", "--out", str(tmp_path / "x.csv")]) == 4
