import csv
import json

import numpy as np
import pytest

from nonholo import brackets, cli, scenarios


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_writes_csv_and_report(capsys, tmp_path):
    out = tmp_path / "f.csv"
    code, stdout, _ = run_cli(capsys, "run", "--scenario", "twist-toy", "--method", "flannery",
                              "--t-end", "1", "--adaptive", "--tol", "1e-10", "--samples", "50",
                              "--out", str(out))
    assert code == 0
    report = json.loads(stdout)
    for key in ("scenario", "method", "opts", "wall_time", "final_state", "max_residual",
                "max_plam", "energy_drift"):
        assert key in report
    raw = out.read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(raw.decode().splitlines()))
    spec = scenarios.builtin("twist-toy").spec
    assert rows[0] == ["t", "q:q1", "q:q2", "q:q3", "p:q1", "p:q2", "p:q3", "lam:1", "g:1",
                       "energy", "H"]
    assert len(rows[0]) == 1 + 2 * spec.n + 2 * spec.m + 2
    assert len(rows) == 51
    assert float(rows[-1][0]) == 1.0
    assert all(len(r) == len(rows[0]) for r in rows)


def test_csv_is_byte_identical_across_runs(capsys, tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert cli.main(["run", "--scenario", "rod-pendulum", "--t-end", "0.5", "--dt", "0.01",
                         "--samples", "30", "--out", str(p)]) == 0
    capsys.readouterr()
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_seventeen_digit_round_trip(capsys, tmp_path):
    out = tmp_path / "o.csv"
    cli.main(["run", "--scenario", "free-particle", "--t-end", "0.3", "--samples", "4",
              "--out", str(out)])
    capsys.readouterr()
    rows = list(csv.reader(out.read_text().splitlines()))[1:]
    for row in rows:
        for cell in row:
            assert cli.fmt(float(cell)) == cell


def test_observable_columns(capsys, tmp_path):
    out = tmp_path / "o.csv"
    code, _, _ = run_cli(capsys, "run", "--scenario", "rod-pendulum", "--t-end", "0.5",
                         "--samples", "5", "--observables", "x^2 + y^2; p_x*lam_1",
                         "--out", str(out))
    assert code == 0
    rows = list(csv.reader(out.read_text().splitlines()))
    assert rows[0][-2:] == ["obs:x^2 + y^2", "obs:p_x*lam_1"]
    assert all(abs(float(r[-2]) - 1.0) < 1e-9 for r in rows[1:])


def test_oracle_run(capsys, tmp_path):
    code, stdout, _ = run_cli(capsys, "run", "--scenario", "rod-pendulum", "--method", "oracle",
                              "--t-end", "0.5", "--out", str(tmp_path / "o.csv"))
    assert code == 0 and json.loads(stdout)["method"] == "oracle"


def test_unknown_scenario(capsys):
    code, _, err = run_cli(capsys, "run", "--scenario", "nope", "--t-end", "1")
    assert code == 1 and "unknown scenario" in err


@pytest.mark.parametrize("argv", [
    ["run", "--scenario", "twist-toy"],
    ["run", "--scenario", "twist-toy", "--t-end", "1", "--method", "vakonomic"],
    ["run", "--scenario", "twist-toy", "--t-end", "1", "--dt", "0.1", "--adaptive"],
    ["run", "--scenario", "twist-toy", "--t-end", "1", "--samples", "1"],
    ["compare", "--scenario", "twist-toy", "--t-end", "1", "--method", "dirac"],
    ["frobnicate"],
])
def test_usage_errors_exit_1(capsys, argv):
    assert cli.main(argv) == 1


def test_help_exits_0(capsys):
    assert cli.main(["run", "--help"]) == 0
    assert "--scenario" in capsys.readouterr().out


def test_bad_scenario_file_exit_1(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"name": "x"}', encoding="utf-8")
    code, _, err = run_cli(capsys, "run", "--scenario", str(path), "--t-end", "1")
    assert code == 1 and "/coordinates" in err


def test_drift_abort_exit_3(capsys, tmp_path):
    code, _, err = run_cli(capsys, "run", "--scenario", "rod-pendulum", "--t-end", "1",
                           "--dt", "0.1", "--drift-abort", "1e-9", "--out", str(tmp_path / "d.csv"))
    assert code == 3 and "drift" in err


def test_numerical_failure_exit_2(capsys, tmp_path):
    code, _, err = run_cli(capsys, "run", "--scenario", "rod-pendulum", "--t-end", "1",
                           "--max-steps", "3", "--out", str(tmp_path / "m.csv"))
    assert code == 2 and "MaxStepsExceeded" in err


def test_compare_pendulum_methods_agree(capsys):
    code, stdout, _ = run_cli(capsys, "compare", "--scenario", "rod-pendulum", "--method", "dirac",
                              "--method", "flannery", "--method", "oracle", "--t-end", "2")
    assert code == 0
    doc = json.loads(stdout)
    pairs = {(p["a"], p["b"]): p for p in doc["pairs"]}
    assert pairs[("dirac", "flannery")]["max_abs_overall"] < 1e-9
    assert set(pairs[("dirac", "oracle")]["max_abs"]) == {"x", "y"}
    assert pairs[("flannery", "oracle")]["max_abs_overall"] < 1e-6


def test_check_clean(capsys):
    code, stdout, _ = run_cli(capsys, "check")
    assert code == 0 and "FAIL" not in stdout


def test_check_filter(capsys):
    code, stdout, _ = run_cli(capsys, "check", "--filter", "brackets")
    lines = [line for line in stdout.splitlines() if line.startswith(("PASS", "FAIL"))]
    assert code == 0 and lines and all("brackets/" in line for line in lines)


def test_check_detects_seeded_fault(capsys, monkeypatch):
    def broken(A, G, metric=None):
        return np.zeros((A.shape[1], A.shape[1]))

    monkeypatch.setattr(brackets, "solve_f", broken)
    code, stdout, _ = run_cli(capsys, "check")
    assert code == 2
    assert "FAIL brackets/transposition-residual" in stdout


def test_check_unknown_filter(capsys):
    code, _, _ = run_cli(capsys, "check", "--filter", "nothing-matches-this")
    assert code == 1
