import csv
import io
import json

import pytest
from click.testing import CliRunner

from freedimer.cli import main


@pytest.fixture
def run():
    runner = CliRunner()

    def invoke(*args, env=None):
        return runner.invoke(main, [str(a) for a in args], env=env)

    return invoke


def table(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestExitCodes:
    def test_unknown_flag(self, run):
        res = run("build", "--bogus")
        assert res.exit_code == 2
        assert "Usage" in res.output

    @pytest.mark.parametrize("args", [
        ("stats", "--domain", "rect:5x4"),
        ("stats", "--domain", "rect:3x3", "--z", "-1"),
        ("stats", "--domain", "rect:3x3", "--z", "nan"),
        ("stats", "--domain", "nonexistent.json"),
        ("sample", "--domain", "rect:3x3", "--seed", "-4"),
        ("heights", "--pairs", "missing.json", "--delta", "0.1"),
        ("walks", "--z", "0"),
        ("mc", "--experiment", "coloured", "--p", "1.5"),
    ])
    def test_validation(self, run, args):
        res = run(*args)
        assert res.exit_code == 2, res.output

    def test_bad_delta(self, run, tmp_path):
        pairs = tmp_path / "p.json"
        pairs.write_text(json.dumps([[[0, 0.5], [0.5, 1]], [[1, 0.5], [1.5, 1]]]))
        res = run("heights", "--pairs", pairs, "--delta", "0")
        assert res.exit_code == 2

    def test_breakdown(self, run):
        res = run("verify", "--domain", "rect:7x3", "--n-side", "1")
        assert res.exit_code == 1
        assert "numerical breakdown" in res.output

    def test_threads_env(self, run):
        res = run("pk", "--x", "0.5i", "--y", "1+0.5i", env={"FREEDIMER_THREADS": "x"})
        assert res.exit_code == 2


class TestCommands:
    def test_build(self, run, tmp_path):
        out = tmp_path / "k.csv"
        res = run("build", "--domain", "rect:3x3", "--out", out)
        assert res.exit_code == 0, res.output
        rows = table(out.read_text())
        assert len(rows) > 0 and set(rows[0]) == {"u_x", "u_y", "v_x", "v_y", "re", "im"}
        entries = {(r["u_x"], r["u_y"], r["v_x"], r["v_y"]): complex(float(r["re"]), float(r["im"]))
                   for r in rows}
        for (a, b, c, d), v in entries.items():
            assert entries[(c, d, a, b)] == pytest.approx(-v)
        man = json.loads((tmp_path / "k.csv.manifest.json").read_text())
        assert {"config_hash", "versions", "tolerances", "config"} <= set(man)
        assert man["rows"] == len(rows)

    def test_deterministic(self, run, tmp_path):
        outs = []
        for i in range(2):
            out = tmp_path / f"s{i}.csv"
            assert run("sample", "--domain", "rect:3x5", "--samples", "5", "--seed", "3", "--out", out).exit_code == 0
            outs.append(out.read_text())
        assert outs[0] == outs[1]
        h = [json.loads((tmp_path / f"s{i}.csv.manifest.json").read_text())["config_hash"] for i in range(2)]
        assert h[0] == h[1]

    def test_stats(self, run):
        res = run("stats", "--domain", "rect:3x3", "--z", "1")
        assert res.exit_code == 0
        rows = table(res.stdout)
        lattice = [r for r in rows if r["kind"] != "leg"]
        assert all(-1e-12 <= float(r["probability"]) <= 1 + 1e-12 for r in lattice)

    def test_sample_mcmc_json(self, run):
        res = run("sample", "--domain", "rect:3x3", "--method", "mcmc", "--samples", "3", "--out", "json")
        assert res.exit_code == 0
        data = json.loads(res.stdout)
        assert data["columns"][0] == "sample" and len(data["rows"]) == 3

    def test_heights(self, run, tmp_path):
        pairs = tmp_path / "p.json"
        pairs.write_text(json.dumps([[[0, 0.5], [0.5, 1]], [[1, 0.5], [1.5, 1]]]))
        out = tmp_path / "h.csv"
        res = run("heights", "--pairs", pairs, "--delta", "0.125", "--z", "1", "--margin", "2", "--out", out)
        assert res.exit_code == 0, res.output
        (row,) = table(out.read_text())
        assert set(row) == {"k", "measured", "predicted", "rel_err", "delta", "z", "radius"}
        assert row["k"] == "2" and float(row["predicted"]) > 0
        man = json.loads((tmp_path / "h.csv.manifest.json").read_text())
        assert man["tolerances"] == {"rel_err": 0.05}

    def test_walks(self, run):
        res = run("walks", "--z", "1", "--kmax", "6")
        assert res.exit_code == 0
        rows = table(res.stdout)
        assert [r["k"] for r in rows] == [str(k) for k in range(7)]

    def test_walks_with_domain(self, run):
        res = run("walks", "--z", "0.7", "--domain", "rect:5x5", "--n", "10", "--n", "20")
        assert res.exit_code == 0
        errs = [float(r["value"]) for r in table(res.stdout) if r["series"] == "qN_error"]
        assert len(errs) == 2 and errs[1] < errs[0]

    @pytest.mark.parametrize("exp", ["sampler", "walk", "coloured"])
    def test_mc(self, run, exp):
        res = run("mc", "--experiment", exp, "--trials", "2000", "--out", "json")
        assert res.exit_code == 0, res.output
        assert json.loads(res.stdout)["rows"]

    def test_mc_coupling(self, run):
        res = run("mc", "--experiment", "coupling", "--trials", "50", "--t", "64", "--t", "128", "--out", "json")
        assert res.exit_code == 0, res.output
        data = json.loads(res.stdout)
        assert data["breaches"] == 0 and data["divergences"] == 0

    def test_verify_table(self, run):
        res = run("verify", "--domain", "rect:5x5", "--z", "1")
        assert res.exit_code == 0
        status = {r["check"]: r["status"] for r in table(res.stdout)}
        assert status["kasteleyn_faces"] == "pass"
        assert status["schur_identity"] == "pass"
        assert status["rw_odd_block"] == "pass" and status["rw_even_block"] == "pass"
        assert "rw_mixed_parity_full_inverse" in status

    def test_version(self, run):
        assert run("--version").exit_code == 0
