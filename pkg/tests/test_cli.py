import csv
from pathlib import Path

import numpy as np
import pytest

from grgmc.cli import main

FIX = Path(__file__).parent / "fixtures"
DESIGN, GROUPS = str(FIX / "design.csv"), str(FIX / "groups.csv")


def run(*args):
    """Exit code of one invocation (argparse usage errors exit via SystemExit)."""
    try:
        return main([str(a) for a in args])
    except SystemExit as exc:
        return exc.code


def read_coefs(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {r["column"]: float(r["coefficient"]) for r in rows}


def report(path):
    return dict(line.split("=", 1) for line in Path(path).read_text().splitlines())


def base(command, out, *extra):
    return [command, "--design", DESIGN, "--groups", GROUPS, "--response", "y", *extra, "--out", out]


def test_fit_alpha_zero_matches_committed_oracle(tmp_path):
    out = tmp_path / "fit.csv"
    assert run(*base("fit", out, "--alpha", 0, "--lambda", 0.1, "--tol", 1e-9)) == 0
    got, want = read_coefs(out), read_coefs(FIX / "alpha0_lambda0.1.csv")
    assert list(got) == list(want)  # original column order
    assert max(abs(got[k] - want[k]) for k in want) <= 1e-4
    rep = report(f"{out}.report")
    assert rep["converged"] == "true" and rep["active_groups"] == "A,C"
    assert float(rep["kkt_residual"]) < 1e-6
    assert {"objective", "iterations", "lambda_max"} <= set(rep)


def test_fit_above_lambda_max_writes_zeros(tmp_path):
    out = tmp_path / "fit.csv"
    assert run(*base("fit", out, "--lambda", 0.01)) == 0
    lam_max = float(report(f"{out}.report")["lambda_max"])
    assert run(*base("fit", out, "--alpha", 0.8, "--lambda", 1.01 * lam_max)) == 0
    assert all(v == 0 for v in read_coefs(out).values())
    assert report(f"{out}.report")["active_groups"] == "(none)"


def test_missing_groups_file(tmp_path, capsys):
    code = run("fit", "--design", DESIGN, "--response", "y", "--lambda", 0.1, "--out", tmp_path / "x.csv")
    assert code == 1
    assert "groups file required" in capsys.readouterr().err


@pytest.mark.parametrize("extra", [
    ["--alpha", "1.5", "--lambda", "0.1"],
    ["--lambda", "-1"],
    ["--lambda", "0.1", "--tol", "0"],
    ["--lambda", "abc"],
    [],
])
def test_validation_errors_exit_one(tmp_path, extra):
    assert run(*base("fit", tmp_path / "x.csv", *extra)) == 1


def test_unreadable_input_exits_one(tmp_path, capsys):
    code = run("fit", "--design", tmp_path / "nope.csv", "--groups", GROUPS, "--lambda", 0.1,
               "--out", tmp_path / "x.csv")
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_nonconvergence_exit_two(tmp_path):
    out = tmp_path / "fit.csv"
    assert run(*base("fit", out, "--alpha", 0.9, "--lambda", 0.01, "--max-iter", 1, "--tol", 1e-12)) == 2
    assert out.exists() and report(f"{out}.report")["converged"] == "false"


def test_sidecar_echoes_resolved_config(tmp_path):
    out = tmp_path / "fit.csv"
    run(*base("fit", out, "--alpha", 0.3, "--lambda", 0.2, "--standardize"))
    cfg = report(f"{out}.cfg")
    assert cfg["alpha"] == "0.3" and cfg["lam"] == "0.2" and cfg["standardize"] == "True"
    assert cfg["command"] == "fit" and cfg["tol"] == "1e-06"


def test_standardized_fit_reports_intercept(tmp_path):
    out = tmp_path / "fit.csv"
    assert run(*base("fit", out, "--lambda", 0.05, "--standardize")) == 0
    coefs = read_coefs(out)
    assert list(coefs)[0] == "(intercept)" and len(coefs) == 8


def test_path_and_cv_outputs(tmp_path):
    out = tmp_path / "path.csv"
    assert run(*base("path", out, "--nlambda", 5)) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "lambda,column,group,coefficient" and len(lines) == 1 + 5 * 7
    out = tmp_path / "cv.csv"
    assert run(*base("cv", out, "--nlambda", 10, "--folds", 3, "--seed", 5, "--alpha", 0.8)) == 0
    rep = report(f"{out}.report")
    assert {"selected_lambda", "nonzero_groups", "excluded_groups"} <= set(rep)
    assert int(rep["nonzero_groups"]) == len(rep["active_groups"].split(","))
    assert len(out.read_text().splitlines()) == 11
    assert Path(f"{out}.coef").exists()


def test_grid_flag_validation(tmp_path):
    assert run(*base("path", tmp_path / "p.csv", "--nlambda", 1)) == 1
    assert run(*base("path", tmp_path / "p.csv", "--lambda-min-ratio", 2)) == 1
    assert run(*base("cv", tmp_path / "c.csv", "--folds", 1)) == 1


def test_diagnose_with_and_without_truth(tmp_path):
    out = tmp_path / "diag.txt"
    assert run(*base("diagnose", out, "--alpha", 0.5)) == 0
    rep = report(out)
    assert {"lambda_max", "convexity_margin"} <= set(rep)
    assert not any(k.startswith("nu") for k in rep)
    truth = tmp_path / "beta.csv"
    truth.write_text("column,coefficient\na1,1.5\na2,-1\nc1,0.5\nc2,0.8\n")
    assert run(*base("diagnose", out, "--alpha", 0.5, "--lambda", 0.05, "--beta-star", truth)) == 0
    rep = report(out)
    assert {"nu[A]", "nu[B]", "nu[C]", "nu_max_support", "nu_min_complement"} <= set(rep)
    assert run(*base("diagnose", out, "--alpha", 0.5, "--beta-star", truth)) == 1


def test_diagnose_rejects_unknown_truth_column(tmp_path):
    truth = tmp_path / "beta.csv"
    truth.write_text("column,coefficient\nzz,1\n")
    assert run(*base("diagnose", tmp_path / "d.txt", "--lambda", 0.1, "--beta-star", truth)) == 1


def test_simulate_small(tmp_path):
    out = tmp_path / "sim.csv"
    args = ["simulate", "--case", "C3", "--replicates", 1, "--values", "4", "--alphas", "0.6",
            "--nlambda", 8, "--out", out]
    assert run(*args) == 0
    rows = list(csv.DictReader(open(out)))
    assert {r["metric"] for r in rows} >= {"mse", "prediction_error", "f1", "fp"}
    assert rows[0]["p"] == "32"


def test_repeated_runs_are_byte_identical(tmp_path):
    for cmd, extra in (("fit", ["--lambda", 0.05, "--alpha", 0.7]), ("path", ["--nlambda", 6]),
                       ("cv", ["--nlambda", 6, "--folds", 3, "--seed", 3])):
        a, b = tmp_path / f"{cmd}_a.csv", tmp_path / f"{cmd}_b.csv"
        run(*base(cmd, a, *extra))
        run(*base(cmd, b, *extra))
        assert a.read_bytes() == b.read_bytes()
        assert Path(f"{a}.report").read_bytes() == Path(f"{b}.report").read_bytes()


def test_prepare_birthweight(tmp_path):
    rng = np.random.default_rng(0)
    header = "rownames,low,age,lwt,race,smoke,ptl,ht,ui,ftv,bwt"
    rows = [",".join(str(v) for v in [i, 0, rng.integers(15, 40), rng.integers(90, 200), rng.integers(1, 4),
                                      rng.integers(0, 2), rng.integers(0, 3), rng.integers(0, 2),
                                      rng.integers(0, 2), rng.integers(0, 4), rng.integers(1500, 4500)])
            for i in range(30)]
    raw = tmp_path / "raw.csv"
    raw.write_text(header + "\n" + "\n".join(rows) + "\n")
    d, g = tmp_path / "bw.csv", tmp_path / "bwg.csv"
    assert run("prepare-birthweight", "--raw", raw, "--design", d, "--groups", g) == 0
    assert len(d.read_text().splitlines()[0].split(",")) == 17
    assert run("prepare-birthweight", "--raw", tmp_path / "missing.csv", "--design", d, "--groups", g) == 1
