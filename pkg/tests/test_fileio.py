"""Config loading, unit conversion, and versioned artifact round-trips."""

import json

import pytest

from edgesplit.errors import ConfigError
from edgesplit.fileio import (FORMAT_VERSION, load_config, load_policy,
                              load_transformer, read_csv, save_policy,
                              write_csv)
from edgesplit.model import DecompositionPolicy, SubModelConfig, sample_policy


class TestLoadConfig:
    def test_example_fleet_units(self, example_config):
        base, fleet = example_config
        assert base.layers == 12
        assert base.embed_dim == 768
        assert base.seq_len == 197
        nano = fleet.devices[0]
        assert nano.name == "nano"
        assert nano.compute == pytest.approx(235.8e6)   # FLOPs/ms
        assert nano.memory == pytest.approx(4e9)        # bytes
        assert nano.bandwidth == pytest.approx(2e3)     # bits/ms
        assert nano.flops_cap == pytest.approx(6.0e9)
        assert nano.busy_power == 10000.0

    def test_central_resolved_by_name(self, example_config):
        _, fleet = example_config
        assert fleet.devices[fleet.central_index].name == "tx2"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(p)

    def test_missing_sections(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"devices": []}))
        with pytest.raises(ConfigError, match="sections"):
            load_config(p)

    def test_missing_transformer_field(self, tmp_path, config_path):
        raw = json.loads(config_path.read_text())
        del raw["transformer"]["heads"]
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(raw))
        with pytest.raises(ConfigError, match="heads"):
            load_config(p)

    def test_missing_device_field(self, tmp_path, config_path):
        raw = json.loads(config_path.read_text())
        del raw["devices"][1]["gflops"]
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(raw))
        with pytest.raises(ConfigError, match="device 1"):
            load_config(p)

    def test_unknown_central_name(self, tmp_path, config_path):
        raw = json.loads(config_path.read_text())
        raw["central"] = "mystery"
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(raw))
        with pytest.raises(ConfigError, match="mystery"):
            load_config(p)

    def test_duplicate_device_names(self, tmp_path, config_path):
        raw = json.loads(config_path.read_text())
        raw["devices"][1]["name"] = raw["devices"][0]["name"]
        raw["central"] = 0
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(raw))
        with pytest.raises(ConfigError, match="unique"):
            load_config(p)


class TestLoadTransformer:
    def test_nested_section(self, config_path, base):
        assert load_transformer(config_path) == base

    def test_bare_fields(self, tmp_path):
        p = tmp_path / "t.json"
        p.write_text(json.dumps({"layers": 2, "dim": 8, "heads": 2,
                                 "mlp_dim": 16, "seq_len": 4, "classes": 5}))
        t = load_transformer(p)
        assert (t.layers, t.embed_dim, t.num_classes) == (2, 8, 5)


class TestPolicyFiles:
    def test_round_trip(self, tmp_path, base, fleet):
        policy = sample_policy(base, fleet, 13)
        path = tmp_path / "policy.json"
        save_policy(policy, path)
        assert load_policy(path) == policy

    def test_extra_fields_survive_but_do_not_break_loading(self, tmp_path):
        policy = DecompositionPolicy((SubModelConfig(1, 4, (2,), (8,)),))
        path = tmp_path / "policy.json"
        save_policy(policy, path, extra={"seed": 7, "objective": 1.25})
        blob = json.loads(path.read_text())
        assert blob["seed"] == 7
        assert load_policy(path) == policy

    def test_version_refusal(self, tmp_path):
        policy = DecompositionPolicy((SubModelConfig(1, 4, (2,), (8,)),))
        path = tmp_path / "policy.json"
        save_policy(policy, path)
        blob = json.loads(path.read_text())
        blob["format_version"] = FORMAT_VERSION + 1
        path.write_text(json.dumps(blob))
        with pytest.raises(ConfigError, match="format_version"):
            load_policy(path)

    def test_missing_policy_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_policy(tmp_path / "gone.json")

    def test_corrupt_policy_file(self, tmp_path):
        p = tmp_path / "p.json"
        p.write_text("][")
        with pytest.raises(ConfigError, match="JSON"):
            load_policy(p)


class TestCsv:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, "a,b", ["1,2", "3,4"])
        header, rows = read_csv(path)
        assert header == "a,b"
        assert rows == ["1,2", "3,4"]
        assert path.read_text().startswith(f"# format_version={FORMAT_VERSION}\n")

    def test_missing_version_tag(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ConfigError, match="format_version"):
            read_csv(p)

    def test_wrong_version(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("# format_version=99\na,b\n1,2\n")
        with pytest.raises(ConfigError, match="unsupported"):
            read_csv(p)

    def test_missing_artifact(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            read_csv(tmp_path / "gone.csv")

    def test_header_only_file(self, tmp_path):
        p = tmp_path / "t.csv"
        write_csv(p, "a,b", [])
        header, rows = read_csv(p)
        assert header == "a,b"
        assert rows == []
