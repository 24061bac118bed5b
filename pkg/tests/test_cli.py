import json

import numpy as np
import pytest
import yaml

from choquet_probit.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_ITERATION_LIMIT,
    EXIT_OK,
    THREADS_ENV,
    main,
)
from choquet_probit.config import template
from choquet_probit.data import export_csv, ingest_csv
from choquet_probit.fuzzy_measures import Capacity, shapley
from choquet_probit.simulation import DgpConfig, generate_dataset

MOD_CAPACITY = {"1": 0.087, "2": 0.21, "3": 0.443, "1,2": 0.382, "1,3": 0.595, "2,3": 0.653}


def write_config(path, edit):
    data = yaml.safe_load(template())
    data["simulation"].update(n_individuals=60, replications=2)
    data["optimizer"].update(draws=30, max_iterations=8, compute_standard_errors=False)
    edit(data)
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return str(path)


@pytest.fixture
def tiny(tmp_path):
    return write_config(tmp_path / "tiny.yaml", lambda d: None)


@pytest.fixture
def simulated(tmp_path, tiny):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", tiny, "--out", str(out)]) == EXIT_OK
    return out


class TestInit:
    def test_writes_template(self, tmp_path, capsys):
        path = tmp_path / "c.yaml"
        assert main(["init", "--config", str(path)]) == EXIT_OK
        assert path.read_text() == template()
        assert main(["init", "--config", str(path)]) == EXIT_CONFIG
        assert main(["init", "--config", str(path), "--force"]) == EXIT_OK


class TestSimulate:
    def test_rows_and_truth(self, simulated):
        ds = ingest_csv(simulated / "dataset.csv")
        lines = (simulated / "dataset.csv").read_text().strip().split("\n")
        assert len(lines) - 1 == 60 * 1 * 5 and ds.n_tasks == 60
        truth = json.loads((simulated / "truth.json").read_text())
        assert truth["n_rows"] == 300 and truth["design"] == "CI-IID"
        assert len(truth["parameters"]) == 15 + 4
        grp = truth["capacity_groups"][0]
        np.testing.assert_allclose(list(grp["shapley"].values()), [0.338, 0.285, 0.242, 0.135], atol=1e-3)
        meta = json.loads((simulated / "metadata.json").read_text())
        assert meta["command"] == "simulate"

    def test_seed_override(self, tmp_path, tiny, simulated):
        other = tmp_path / "other"
        assert main(["simulate", "--config", tiny, "--out", str(other), "--seed", "7"]) == EXIT_OK
        assert (other / "dataset.csv").read_bytes() != (simulated / "dataset.csv").read_bytes()


class TestEstimateAndAnalyze:
    def test_pipeline(self, tmp_path, tiny, simulated, capsys):
        fit = tmp_path / "fit"
        data = str(simulated / "dataset.csv")
        code = main(["estimate", "--config", tiny, "--data", data, "--out", str(fit)])
        assert code == EXIT_ITERATION_LIMIT
        result = json.loads((fit / "result.json").read_text())
        assert result["convergence"]["status"] == "iteration_limit"
        assert result["data"] == {"path": "dataset.csv", "n_tasks": 60, "n_individuals": 60}
        assert result["aic"] == pytest.approx(2 * result["n_params"] - 2 * result["loglik"])
        assert "AIC" in (fit / "report.txt").read_text()

        cfg = write_config(
            tmp_path / "an.yaml",
            lambda d: d["analyze"].update(
                result=str(fit / "result.json"),
                marginal_effects=[{"attribute": "x1", "pct_change": -0.25, "alternatives": [1]}],
            ),
        )
        assert main(["analyze", "--config", cfg, "--data", data, "--out", str(fit)]) == EXIT_OK
        analysis = json.loads((fit / "analysis.json").read_text())
        for grp in analysis["capacity_groups"]:
            assert sum(grp["shapley"].values()) == pytest.approx(1.0, abs=1e-12)
        effect = analysis["marginal_effects"][0]
        assert len(effect["by_alternative"]) == 5
        assert sum(a["mean"] for a in effect["by_alternative"]) == pytest.approx(0.0, abs=0.02)
        assert "sum 1.0000" in (fit / "analysis.txt").read_text()

    def test_missing_column(self, tmp_path, simulated, capsys):
        def edit(d):
            d["model"]["ci_attributes"][0]["column"] = "travel_time"

        cfg = write_config(tmp_path / "bad.yaml", edit)
        code = main(["estimate", "--config", cfg, "--data", str(simulated / "dataset.csv"), "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA
        assert "travel_time" in capsys.readouterr().err

    def test_malformed_data(self, tmp_path, tiny, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("individual_id,task_id,alt_id,chosen\n1,1,1,1\n1,1,2,1\n")
        assert main(["estimate", "--config", tiny, "--data", str(bad), "--out", str(tmp_path / "o")]) == EXIT_DATA
        assert "line 3" in capsys.readouterr().err

    def test_config_error(self, tmp_path, simulated, capsys):
        cfg = write_config(tmp_path / "bad.yaml", lambda d: d["optimizer"].update(draws="many"))
        assert main(["estimate", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        assert "optimizer.draws" in capsys.readouterr().err

    def test_no_data(self, tmp_path, tiny):
        assert main(["estimate", "--config", tiny, "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == EXIT_DATA

    def test_three_attribute_ordering(self, tmp_path):
        # synthetic data from the three-attribute mode-choice capacity:
        # in-vehicle time, out-of-vehicle time, cost
        mu = Capacity.from_labels(3, MOD_CAPACITY)
        s = shapley(mu)
        assert s[2] > s[1] > s[0]
        dgp = DgpConfig(
            name="mod", n_individuals=1500, n_alternatives=3, n_attributes=3, capacity=mu,
            ascs=(0.0, -0.2, -0.1), error_cov=((1.0, 0.5), (0.5, 1.0)),
        )
        ds, _ = generate_dataset(dgp, 0)
        export_csv(ds, tmp_path / "mod.csv")

        def edit(d):
            d["model"]["n_alternatives"] = 3
            d["model"]["ci_attributes"] = d["model"]["ci_attributes"][:3]
            d["optimizer"].update(draws=100, max_iterations=200)

        cfg = write_config(tmp_path / "mod.yaml", edit)
        code = main(["estimate", "--config", cfg, "--data", str(tmp_path / "mod.csv"), "--out", str(tmp_path / "fit")])
        assert code == EXIT_OK
        est = json.loads((tmp_path / "fit" / "result.json").read_text())["capacity_groups"][0]["shapley"]
        assert est["x3"] > est["x2"] > est["x1"]


class TestThreads:
    def run(self, tmp_path, tiny, simulated, *extra):
        out = tmp_path / "t"
        main(["estimate", "--config", tiny, "--data", str(simulated / "dataset.csv"), "--out", str(out), *extra])
        return json.loads((out / "result.json").read_text())

    def test_env_and_flag(self, tmp_path, tiny, simulated, monkeypatch):
        base = self.run(tmp_path, tiny, simulated)
        monkeypatch.setenv(THREADS_ENV, "2")
        env = self.run(tmp_path, tiny, simulated)
        assert env["optimizer"]["threads"] == 2
        flag = self.run(tmp_path, tiny, simulated, "--threads", "3")
        assert flag["optimizer"]["threads"] == 3
        # threads change scheduling only
        assert env["parameters"] == base["parameters"] == flag["parameters"]

    def test_bad_env(self, tmp_path, tiny, simulated, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "zero")
        code = main(["estimate", "--config", tiny, "--data", str(simulated / "dataset.csv"), "--out", str(tmp_path)])
        assert code == EXIT_CONFIG


class TestMonteCarloAndDeterminism:
    def test_two_replications(self, tmp_path, tiny, capsys):
        out = tmp_path / "mc"
        assert main(["montecarlo", "--config", tiny, "--out", str(out)]) == EXIT_OK
        report = json.loads((out / "montecarlo.json").read_text())
        assert report["n_completed"] == 2 and [r["replication"] for r in report["replications"]] == [0, 1]
        assert "replication 2/2" in capsys.readouterr().out
        assert "SDMAE" in (out / "montecarlo.txt").read_text()

    def test_byte_identical_reruns(self, tmp_path, tiny, simulated):
        data = str(simulated / "dataset.csv")
        for name in ("a", "b"):
            main(["estimate", "--config", tiny, "--data", data, "--out", str(tmp_path / name)])
            main(["montecarlo", "--config", tiny, "--out", str(tmp_path / name)])
        for f in ("result.json", "report.txt", "montecarlo.json", "montecarlo.txt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "choquet_probit.cli", "estimate", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "--data" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "choquet_probit.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
