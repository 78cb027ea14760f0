"""End-to-end pipeline runs, artifact contracts, and error records."""

import json
import filecmp

import pytest

from edgesplit.bayesopt import random_search
from edgesplit.cli import main
from edgesplit.fileio import load_config, load_policy
from edgesplit.latency import load_predictor
from edgesplit.objective import CapacityOracle
from edgesplit.sim import MODES

SEED = 4


def run_pipeline(cfg: str, out: str) -> None:
    """Tiny but complete profile -> report run; asserts every exit code."""
    steps = [
        ["profile", "--fleet", cfg, "--out", out, "--seed", str(SEED),
         "--samples", "40"],
        ["train-predictor", "--fleet", cfg, "--out", out, "--seed",
         str(SEED), "--epochs", "20", "--hidden", "8"],
        ["optimize", "--fleet", cfg, "--out", out, "--seed", str(SEED),
         "--r", "3", "--iters", "3"],
        ["simulate", "--fleet", cfg, "--out", out,
         "--policy", f"{out}/policy_best.json"],
        ["boost", "--fleet", cfg, "--out", out, "--seed", str(SEED),
         "--policy", f"{out}/policy_best.json", "--epochs", "40"],
        ["report", "--out", out],
    ]
    for argv in steps:
        assert main(argv) == 0, f"step failed: {argv[0]}"


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, config_path):
    out = tmp_path_factory.mktemp("run")
    run_pipeline(str(config_path), str(out))
    return out


class TestPipeline:
    def test_all_artifacts_present(self, run_dir, fleet):
        names = {p.name for p in run_dir.iterdir()}
        for dev in fleet.devices:
            assert f"latency_{dev.name}.csv" in names
            assert f"predictor_{dev.name}.json" in names
        for mode in MODES:
            assert f"sim_{mode}.json" in names
            assert f"timeline_{mode}.csv" in names
        for fixed in ("predictor_metrics.csv", "policy_best.json",
                      "search_log.csv", "boost_report.json", "report.json",
                      "report.csv", "psi_trajectory.csv"):
            assert fixed in names

    def test_every_json_artifact_is_versioned(self, run_dir):
        for path in run_dir.glob("*.json"):
            blob = json.loads(path.read_text())
            assert blob["format_version"] == 1, path.name

    def test_every_csv_artifact_is_versioned(self, run_dir):
        for path in run_dir.glob("*.csv"):
            first = path.read_text().splitlines()[0]
            assert first == "# format_version=1", path.name

    def test_emitted_policy_loads_and_matches_fleet(self, run_dir, fleet):
        policy = load_policy(run_dir / "policy_best.json")
        assert len(policy) == len(fleet)

    def test_report_consolidates_sim_results(self, run_dir):
        report = json.loads((run_dir / "report.json").read_text())
        sim = json.loads((run_dir / "sim_aggregate-edge.json").read_text())
        assert (report["modes"]["aggregate-edge"]["end_to_end_ms"]
                == sim["end_to_end_ms"])
        assert report["search"]["evaluations"] == 6  # r=3 + iters=3

    def test_rerun_is_byte_identical(self, run_dir, config_path,
                                     tmp_path_factory):
        out2 = tmp_path_factory.mktemp("rerun")
        run_pipeline(str(config_path), str(out2))
        names = sorted(p.name for p in run_dir.iterdir())
        assert names == sorted(p.name for p in out2.iterdir())
        match, mismatch, errors = filecmp.cmpfiles(run_dir, out2, names,
                                                   shallow=False)
        assert mismatch == [] and errors == []

    def test_zero_iters_degenerates_to_random_search(self, run_dir,
                                                     config_path, tmp_path):
        out = tmp_path / "rand"
        cfg = str(config_path)
        for name in ("latency_nano.csv", "latency_tx2.csv",
                     "latency_orin.csv", "predictor_nano.json",
                     "predictor_tx2.json", "predictor_orin.json"):
            (out / name).parent.mkdir(parents=True, exist_ok=True)
            (out / name).write_bytes((run_dir / name).read_bytes())
        assert main(["optimize", "--fleet", cfg, "--out", str(out),
                     "--seed", "11", "--r", "5", "--iters", "0"]) == 0
        base, fleet = load_config(config_path)
        predictors = {d.name: load_predictor(out / f"predictor_{d.name}.json")
                      for d in fleet.devices}
        ref = random_search(base, fleet, predictors, CapacityOracle(base),
                            n_draws=5, delta=0.005, seed=11)
        assert load_policy(out / "policy_best.json") == ref.best_policy


class TestSimulateFlags:
    def test_single_mode_writes_only_that_mode(self, run_dir, config_path,
                                               tmp_path):
        out = tmp_path / "one"
        assert main(["simulate", "--fleet", str(config_path),
                     "--out", str(out),
                     "--policy", str(run_dir / "policy_best.json"),
                     "--mode", "pipe-edge"]) == 0
        names = {p.name for p in out.iterdir()}
        assert names == {"sim_pipe-edge.json", "timeline_pipe-edge.csv"}

    def test_single_edge_uses_the_slowest_device(self, run_dir):
        sim = json.loads((run_dir / "sim_single-edge.json").read_text())
        assert [s["name"] for s in sim["device_stats"]] == ["nano"]


class TestErrorRecords:
    def read_record(self, capsys) -> dict:
        err = capsys.readouterr().err.strip().splitlines()[-1]
        return json.loads(err)

    def test_optimize_without_predictors(self, config_path, tmp_path,
                                         capsys):
        code = main(["optimize", "--fleet", str(config_path),
                     "--out", str(tmp_path / "empty"), "--seed", "0",
                     "--r", "2", "--iters", "0"])
        assert code == 1
        record = self.read_record(capsys)
        assert record["error"] == "MissingArtifact"
        assert "predictor" in record["message"]

    def test_report_on_empty_dir(self, tmp_path, capsys):
        assert main(["report", "--out", str(tmp_path / "void")]) == 1
        assert self.read_record(capsys)["error"] == "MissingArtifact"

    def test_report_refuses_mixed_versions(self, run_dir, tmp_path, capsys):
        out = tmp_path / "mixed"
        out.mkdir()
        for p in run_dir.iterdir():
            (out / p.name).write_bytes(p.read_bytes())
        blob = json.loads((out / "sim_aggregate-edge.json").read_text())
        blob["format_version"] = 2
        (out / "sim_aggregate-edge.json").write_text(json.dumps(blob))
        assert main(["report", "--out", str(out)]) == 1
        record = self.read_record(capsys)
        assert record["error"] == "ConfigError"
        assert "mixes" in record["message"]

    def test_bad_fleet_config(self, tmp_path, capsys):
        cfg = tmp_path / "broken.json"
        cfg.write_text("{\"transformer\": {}}")
        code = main(["profile", "--fleet", str(cfg),
                     "--out", str(tmp_path / "x"), "--seed", "0"])
        assert code == 1
        assert self.read_record(capsys)["error"] == "ConfigError"

    def test_infeasible_policy_rejected_by_simulate(self, config_path,
                                                    tmp_path, capsys, base):
        from edgesplit.fileio import save_policy
        from edgesplit.model import DecompositionPolicy, full_submodel
        bad = DecompositionPolicy((full_submodel(base),) * 3)
        path = tmp_path / "bad_policy.json"
        save_policy(bad, path)
        code = main(["simulate", "--fleet", str(config_path),
                     "--out", str(tmp_path / "simbad"),
                     "--policy", str(path)])
        assert code == 1
        assert self.read_record(capsys)["error"] == "ConfigError"
