import json
import math

import numpy as np
import pytest

from gmrfsel.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from gmrfsel.risk import RiskTable
from gmrfsel.sampler import read_batch
from gmrfsel.selection import SelectionReport, read_rho_table, read_selection_table
from gmrfsel.spectral import read_theta


def simulate(tmp_path, name="b.gmrf", *extra):
    out = tmp_path / name
    args = ["simulate", "--preset", "zero", "--p", "10", "--n", "5", "--sigma2", "1", "--seed", "7",
            "--out", str(out), *extra]
    assert main(args) == EXIT_OK
    return out


class TestSimulate:
    def test_writes_batch(self, tmp_path, capsys):
        out = simulate(tmp_path)
        b = read_batch(out)
        assert b.data.size == 500 and b.seed == 7
        assert "p=10 n=5 seed=7" in capsys.readouterr().out

    def test_byte_identical(self, tmp_path):
        a = simulate(tmp_path, "a.gmrf").read_bytes()
        b = simulate(tmp_path, "b.gmrf", "--threads", "3").read_bytes()
        assert a == b

    def test_infeasible(self, tmp_path, capsys):
        code = main(["simulate", "--preset", "iso-m1", "--a", "0.3", "--p", "10", "--out", str(tmp_path / "x")])
        assert code == EXIT_USAGE
        assert "1/4" in capsys.readouterr().err

    def test_theta_file(self, tmp_path):
        (tmp_path / "t.csv").write_text("0,0.1,0,0.1\n0.1,0,0,0\n0,0,0,0\n0.1,0,0,0\n")
        assert main(["simulate", "--theta", str(tmp_path / "t.csv"), "--n", "2", "--out", str(tmp_path / "b.csv")]) == 0
        rows = (tmp_path / "b.csv").read_text().strip().split("\n")
        assert len(rows) == 2 and len(rows[0].split(",")) == 16

    @pytest.mark.parametrize("args", [
        ["simulate", "--p", "10", "--out", "x"],
        ["simulate", "--preset", "zero", "--out", "x"],
        ["simulate", "--preset", "zero", "--p", "10", "--n", "0", "--out", "x"],
        ["bogus"],
    ])
    def test_usage_errors(self, args, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(args) == EXIT_USAGE


class TestFit:
    def test_empty_model(self, tmp_path, capsys):
        b = simulate(tmp_path)
        capsys.readouterr()
        assert main(["fit", "--batch", str(b), "--model", "0"]) == EXIT_OK
        rec = json.loads(capsys.readouterr().out)
        assert rec["coeffs"] == [] and rec["gamma"] == pytest.approx(np.mean(read_batch(b).data ** 2))

    def test_m1_within_noise(self, tmp_path):
        b = simulate(tmp_path)
        out = tmp_path / "fit.json"
        assert main(["fit", "--batch", str(b), "--model", "1", "--out", str(out), "--theta-out",
                     str(tmp_path / "t.csv")]) == EXIT_OK
        rec = json.loads(out.read_text())
        # each coefficient is a neighbour-pair correlation with sd about 1 / sqrt(2 n p^2)
        assert all(abs(c) < 4 / math.sqrt(2 * 500) for c in rec["coeffs"])
        assert rec["theta_csv_path"].endswith("t.csv")
        assert read_theta(tmp_path / "t.csv").p == 10

    def test_iso_single_coefficient(self, tmp_path, capsys):
        b = simulate(tmp_path)
        capsys.readouterr()
        assert main(["fit", "--batch", str(b), "--iso"]) == EXIT_OK
        assert len(json.loads(capsys.readouterr().out)["coeffs"]) == 1

    def test_missing_file(self, tmp_path):
        assert main(["fit", "--batch", str(tmp_path / "nope.gmrf")]) == EXIT_USAGE

    def test_bad_model_index(self, tmp_path):
        b = simulate(tmp_path)
        assert main(["fit", "--batch", str(b), "--model", "999"]) == EXIT_USAGE


class TestSelect:
    def test_slope_report(self, tmp_path):
        b = tmp_path / "iso.gmrf"
        assert main(["simulate", "--preset", "iso-m1", "--a", "0.2", "--p", "15", "--n", "10", "--seed", "3",
                     "--out", str(b)]) == 0
        out, table = tmp_path / "r.json", tmp_path / "r.csv"
        assert main(["select", "--batch", str(b), "--iso", "--max-dim", "20", "--out", str(out),
                     "--table", str(table)]) == EXIT_OK
        rep = SelectionReport.from_json(out.read_text())
        assert "kappa_hat" in rep.diagnostics
        assert rep.chosen_index in [r.model_index for r in read_selection_table(table.read_text())]

    def test_known_mode_arithmetic(self, tmp_path):
        b = simulate(tmp_path)
        out = tmp_path / "r.json"
        phi = 1.0 * 1.25
        assert main(["select", "--batch", str(b), "--mode", "known", "--phi-max", str(phi), "--K", "1.1",
                     "--max-dim", "10", "--out", str(out)]) == EXIT_OK
        for r in json.loads(out.read_text())["models"]:
            assert r["criterion"] == r["gamma"] + 1.1 * 2.0**2 * phi * r["d"] / (5 * 100)

    def test_empty_collection(self, tmp_path):
        b = simulate(tmp_path)
        assert main(["select", "--batch", str(b), "--max-dim", "-1"]) == EXIT_USAGE

    def test_calibration_failure_is_numerical(self, tmp_path):
        b = simulate(tmp_path)
        assert main(["select", "--batch", str(b), "--max-dim", "4"]) == EXIT_NUMERICAL

    def test_threads_byte_identical(self, tmp_path):
        b = simulate(tmp_path)
        outs = []
        for t in ("1", "2"):
            o = tmp_path / f"s{t}.json"
            assert main(["select", "--batch", str(b), "--max-dim", "20", "--threads", t, "--out", str(o)]) == 0
            outs.append(o.read_bytes())
        assert outs[0] == outs[1]


class TestRisk:
    def test_table(self, tmp_path):
        out, js = tmp_path / "risk.csv", tmp_path / "risk.json"
        args = ["risk", "--preset", "zero", "--p", "10", "--n", "5", "--reps", "50", "--models", "0", "1",
                "--seed", "3", "--out", str(out), "--json", str(js)]
        assert main(args) == EXIT_OK
        table = RiskTable.from_csv(out.read_text())
        assert [r.model_index for r in table.rows] == [0, 1]
        assert table.rows[1].asymptotic == pytest.approx(4.0)
        assert RiskTable.from_json(js.read_text()).rows[1].reps == 50

    def test_single_rep(self, tmp_path, capsys):
        assert main(["risk", "--preset", "zero", "--p", "8", "--reps", "1", "--models", "1"]) == EXIT_OK
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0].split(",")[4] == "stderr" and lines[1].split(",")[4] == "nan"

    def test_deterministic_across_threads(self, tmp_path):
        outs = []
        for t in ("1", "3"):
            o = tmp_path / f"r{t}.csv"
            assert main(["risk", "--preset", "iso-m1", "--a", "0.1", "--p", "8", "--n", "2", "--reps", "10",
                         "--max-dim", "4", "--seed", "5", "--threads", t, "--out", str(o)]) == 0
            outs.append(o.read_bytes())
        assert outs[0] == outs[1]


class TestRhoTable:
    def test_p8_monotone(self, tmp_path):
        out = tmp_path / "rho.csv"
        assert main(["rho-table", "--p", "8", "--k", "4", "--out", str(out)]) == EXIT_OK
        rows = read_rho_table(out.read_text())
        assert len(rows) == 4
        assert all(b.rho >= a.rho - 1e-9 for a, b in zip(rows, rows[1:]))

    def test_single_row(self, capsys):
        assert main(["rho-table", "--p", "8", "--k", "1"]) == EXIT_OK
        assert len(capsys.readouterr().out.strip().split("\n")) == 2

    def test_small_p(self):
        assert main(["rho-table", "--p", "6"]) == EXIT_USAGE
