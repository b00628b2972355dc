import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from otaffl.cli import main
from otaffl.config import parse_config
from otaffl.errors import ConfigError

REPO = Path(__file__).resolve().parents[1]

SMALL = """
rounds = 4
[algorithm]
kind = "OTA-FFL"
epsilon = 0.3
[data]
num_clients = 4
samples_per_client = 30
features = 3
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(SMALL)
    return path


def body(path):
    return path.read_text().splitlines()[1:]


class TestParseConfig:
    def test_minimal_defaults(self, tmp_path):
        path = tmp_path / "m.toml"
        path.write_text('[algorithm]\nkind = "OTA-FFL"\n')
        cfg = parse_config(path)
        assert cfg.algorithm.epsilon == 0.3 and cfg.algorithm.zeta == 0.0
        assert cfg.channel.power_budget == 1.0 and cfg.rounds == 100 and cfg.seed == 0
        assert cfg.channel.noise_mode == "cycle"
        np.testing.assert_allclose(cfg.channel.noise_values, np.arange(1, 11) / 10)

    def test_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"algorithm": {"kind": "OTA-FedAvg"}, "rounds": 3}))
        assert parse_config(path).rounds == 3

    def test_unknown_key_is_named(self):
        with pytest.raises(ConfigError, match="epsilonn") as info:
            parse_config({"algorithm": {"kind": "OTA-FFL", "epsilonn": 0.1}})
        assert info.value.key == "algorithm.epsilonn"

    def test_unknown_top_level(self):
        with pytest.raises(ConfigError, match="roundz"):
            parse_config({"algorithm": {"kind": "OTA-FFL"}, "roundz": 3})

    def test_missing_kind(self):
        with pytest.raises(ConfigError, match="algorithm.kind"):
            parse_config({})

    @pytest.mark.parametrize(
        "raw, key",
        [
            ({"algorithm": {"kind": "OTA-FedAvg", "epsilon": 0.3}}, "algorithm.epsilon"),
            ({"algorithm": {"kind": "OTA-FFL", "gamma": 1.0}}, "algorithm.gamma"),
            ({"algorithm": {"kind": "OTA-FFL", "epsilon": 1.5}}, "algorithm.epsilon"),
            ({"algorithm": {"kind": "OTA-q-FFL", "q_base": -1.0}}, "algorithm.q_base"),
            ({"algorithm": {"kind": "OTA-FFL"}, "scheduler": {"kind": "gibbs"}}, "scheduler.target_size"),
            ({"algorithm": {"kind": "OTA-FFL"}, "scheduler": {"kind": "gibbs", "target_size": 20}}, "scheduler.target_size"),
            ({"algorithm": {"kind": "OTA-FFL"}, "data": {"source": "idx"}}, "data.images"),
            ({"algorithm": {"kind": "OTA-FFL"}, "model": {"kind": "logistic", "hidden": [4, 4]}}, "model.hidden"),
            ({"algorithm": {"kind": "OTA-FFL"}, "channel": {"power_budget": 0}}, "channel.power_budget"),
            ({"algorithm": {"kind": "OTA-FFL"}, "rounds": "ten"}, "rounds"),
            ({"algorithm": {"kind": "OTA-FFL"}, "data": {"num_clients": 2, "samples_per_client": [5, 6, 7]}}, "data.samples_per_client"),
        ],
    )
    def test_cross_field_errors(self, raw, key):
        with pytest.raises(ConfigError) as info:
            parse_config(raw)
        assert info.value.key == key

    def test_overrides_beat_file(self, cfg_file):
        cfg = parse_config(cfg_file, {"seed": 7, "algorithm.epsilon": 0.1, "rounds": None})
        assert cfg.seed == 7 and cfg.algorithm.epsilon == 0.1 and cfg.rounds == 4

    def test_algorithm_override_drops_foreign_parameters(self, cfg_file):
        cfg = parse_config(cfg_file, {"algorithm.kind": "fedavg"})
        assert cfg.algorithm.kind == "OTA-FedAvg" and cfg.algorithm.epsilon is None

    @pytest.mark.parametrize(
        "raw",
        [
            {"algorithm": {"kind": "OTA-FFL", "zeta": [0.1, 0.2, 0.3]}, "data": {"num_clients": 3}},
            {"algorithm": {"kind": "OTA-q-FFL"}, "model": {"kind": "mlp", "hidden": [5, 6]}},
            {"algorithm": {"kind": "OTA-TERM", "gamma": 0.5}, "scheduler": {"kind": "gibbs", "target_size": 3}},
            {"algorithm": {"kind": "OTA-FedAvg"}, "channel": {"fading": "per_client", "gains": [1.0, 0.5]}, "data": {"num_clients": 2}},
        ],
    )
    def test_echo_round_trip(self, raw):
        cfg = parse_config(raw)
        echoed = json.loads(json.dumps(cfg.to_dict()))
        assert parse_config(echoed) == cfg


class TestCli:
    def test_run_is_reproducible(self, cfg_file, tmp_path):
        for name in ("a", "b"):
            assert main(["run", "--config", str(cfg_file), "--seed", "7", "--out", str(tmp_path / name)]) == 0
        assert body(tmp_path / "a" / "rounds.csv") == body(tmp_path / "b" / "rounds.csv")
        assert len(body(tmp_path / "a" / "rounds.csv")) == 4

    def test_summary_config_reproduces_run(self, cfg_file, tmp_path):
        assert main(["run", "--config", str(cfg_file), "--seed", "3", "--out", str(tmp_path / "a")]) == 0
        doc = json.loads((tmp_path / "a" / "summary.json").read_text())
        assert doc["seed"] == 3
        echo = tmp_path / "echo.json"
        echo.write_text(json.dumps(doc["config"]))
        assert main(["run", "--config", str(echo), "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "rounds.csv").read_bytes() == (tmp_path / "b" / "rounds.csv").read_bytes()

    def test_flags_override(self, cfg_file, tmp_path):
        out = tmp_path / "o"
        assert main(["run", "--config", str(cfg_file), "--rounds", "2", "--epsilon", "0.0", "--out", str(out)]) == 0
        doc = json.loads((out / "summary.json").read_text())
        assert doc["config"]["rounds"] == 2 and doc["config"]["algorithm"]["epsilon"] == 0.0

    def test_validation_error_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text('[algorithm]\nkind = "OTA-FFL"\nepsilonn = 0.2\n')
        assert main(["run", "--config", str(bad)]) == 1
        assert "epsilonn" in capsys.readouterr().err

    def test_missing_file_exit_1(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.toml")]) == 1

    def test_bad_flag_exit_1(self):
        with pytest.raises(SystemExit) as info:
            main(["run", "--config", "x", "--epsilonn", "1"])
        assert info.value.code == 1

    def test_runtime_failure_exit_2_and_marker(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(
            'rounds = 2\n[algorithm]\nkind = "OTA-FedAvg"\n[data]\nnum_clients = 2\nsamples_per_client = 20\n'
            '[channel]\nfading = "fixed"\ngains = 1e-9\n'
        )
        out = tmp_path / "o"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
        assert "ChannelDegenerateError" in (out / "FAILED").read_text()

    def test_verify_exit_0(self, capsys):
        assert main(["verify", "--only", "power-constraint", "--only", "gradients"]) == 0
        out = capsys.readouterr().out
        assert "PASS  power-constraint" in out and "2/2 checks passed" in out

    def test_verify_all_checks_pass(self, capsys):
        assert main(["verify"]) == 0
        assert "FAIL" not in capsys.readouterr().out

    def test_verify_reports_failure(self, monkeypatch, capsys):
        import otaffl.verify as verify

        monkeypatch.setitem(verify.CHECKS, "broken", (lambda: (False, "forced"), {}))
        assert main(["verify", "--only", "broken"]) == 2
        assert "FAIL  broken" in capsys.readouterr().out

    def test_sweep(self, cfg_file, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep", "--config", str(cfg_file), "--epsilon", "0,0.3,1", "--out", str(out)]) == 0
        dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
        assert dirs == ["eps_0.3_seed_0", "eps_0_seed_0", "eps_1_seed_0"]
        assert all((out / d / "rounds.csv").exists() for d in dirs)
        agg = json.loads((out / "aggregate.json").read_text())
        assert set(agg["by_epsilon"]) == {"0", "0.3", "1"} and agg["failed_runs"] == []
        assert len((out / "aggregate.csv").read_text().splitlines()) == 4

    def test_sweep_parallel_matches_serial(self, cfg_file, tmp_path):
        args = ["sweep", "--config", str(cfg_file), "--seed", "1,2"]
        assert main(args + ["--out", str(tmp_path / "s")]) == 0
        assert main(args + ["--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
        for seed in (1, 2):
            name = f"seed_{seed}/rounds.csv"
            assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "p" / name).read_bytes()

    def test_module_entry_point(self, cfg_file, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "otaffl", "run", "--config", str(cfg_file), "--out", str(tmp_path / "m")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert "OTA-FFL" in proc.stdout

    def test_shipped_configs_parse(self):
        for path in sorted((REPO / "configs").glob("*.toml")):
            parse_config(path)
