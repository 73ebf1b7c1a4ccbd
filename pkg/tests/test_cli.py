"""CLI tests: config parsing, overrides, artifacts, exit codes."""

import json
import os

import numpy as np
import pytest

from condenset import cli
from condenset.condense import SyntheticSet
from condenset.errors import ConfigError


TOY_CONFIG = """
# tiny end-to-end run
data.kind = blobs
data.classes = 2
data.per_class = 30
data.test_per_class = 8
data.hw = 8

condense.ipc = 2
condense.iterations = 4
condense.partition = 2
condense.model_depth = 1
condense.model_width = 2
condense.queue_init = 2
condense.queue_max = 4
condense.queue_steps = 1
condense.push_interval = 3
condense.model_batch = 8
condense.real_batch_per_class = 6

eval.runs = 1
eval.epochs = 2
eval.batch = 8
eval.model_depth = 1
eval.model_width = 2

run.seed = 0
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TOY_CONFIG)
    return str(path)


def run_cli(*argv):
    return cli.main(list(argv))


class TestConfigParsing:
    def test_flat_dotted_keys_and_comments(self, config_path):
        cfg = cli.load_config_file(config_path)
        assert cfg["data.kind"] == "blobs"
        assert cfg["condense.iterations"] == 4
        assert cfg["eval.runs"] == 1

    def test_value_types(self, tmp_path):
        path = tmp_path / "types.cfg"
        path.write_text('a.int = 3\na.float = 0.5\na.bool = true\na.str = blobs\n'
                        'a.quoted = "hi there"\n')
        cfg = cli.load_config_file(path)
        assert cfg["a.int"] == 3 and cfg["a.float"] == 0.5
        assert cfg["a.bool"] is True
        assert cfg["a.str"] == "blobs" and cfg["a.quoted"] == "hi there"

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("this is not a key value line\n")
        with pytest.raises(ConfigError):
            cli.load_config_file(path)

    def test_overrides_replace_values(self):
        cfg = {"condense.iterations": 4}
        cli.apply_cli_overrides(cfg, ["--condense.iterations", "9", "--data.kind", "blobs"])
        assert cfg["condense.iterations"] == 9
        assert cfg["data.kind"] == "blobs"

    def test_bad_override_rejected(self):
        with pytest.raises(ConfigError):
            cli.apply_cli_overrides({}, ["--oops"])
        with pytest.raises(ConfigError):
            cli.apply_cli_overrides({}, ["--a.b"])

    def test_unknown_config_key_named_in_error(self, tmp_path, config_path, capsys):
        code = run_cli("condense", "--config", config_path,
                       "--out", str(tmp_path / "o"), "--condense.bogus_knob", "1")
        assert code == cli.EXIT_CONFIG
        assert "condense.bogus_knob" in capsys.readouterr().out

    def test_missing_required_field_named_in_error(self, tmp_path, capsys):
        empty = tmp_path / "empty.cfg"
        empty.write_text("")
        code = run_cli("condense", "--config", str(empty), "--out", str(tmp_path / "o"))
        assert code == cli.EXIT_CONFIG
        assert "data.kind" in capsys.readouterr().out


class TestCondenseCommand:
    def test_run_directory_contains_all_artifacts(self, tmp_path, config_path):
        out = tmp_path / "run"
        assert run_cli("condense", "--config", config_path, "--out", str(out)) == 0
        assert (out / "condensed.dcs").exists()
        assert (out / "metrics.jsonl").exists()
        assert (out / "grid.ppm").exists()
        assert (out / "config.json").exists()
        assert (out / "queue" / "queue.json").exists()
        lines = (out / "metrics.jsonl").read_text().strip().splitlines()
        assert len(lines) == 4
        assert all("dm" in json.loads(line) for line in lines)

    def test_seed_override_changes_config_hash(self, tmp_path, config_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_cli("condense", "--config", config_path, "--out", str(out1))
        run_cli("condense", "--config", config_path, "--out", str(out2), "--seed", "9")
        h1 = json.loads((out1 / "config.json").read_text())["config_hash"]
        h2 = json.loads((out2 / "config.json").read_text())["config_hash"]
        assert h1 != h2
        _, header = SyntheticSet.load(out1 / "condensed.dcs")
        assert header["config_hash"] == h1

    def test_default_out_root_env(self, tmp_path, config_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_ROOT_ENV, str(tmp_path / "root"))
        assert run_cli("condense", "--config", config_path) == 0
        runs = list((tmp_path / "root").iterdir())
        assert len(runs) == 1 and runs[0].name.startswith("condense-")


class TestEvalCommand:
    def test_eval_report_with_provenance(self, tmp_path, config_path):
        out = tmp_path / "run"
        run_cli("condense", "--config", config_path, "--out", str(out))
        eout = tmp_path / "eval"
        code = run_cli("eval", "--config", config_path, "--out", str(eout),
                       "--condensed", str(out / "condensed.dcs"), "--runs", "1")
        assert code == 0
        payload = json.loads((eout / "report.json").read_text())
        assert payload["report"]["std"] == 0.0
        assert len(payload["report"]["accuracies"]) == 1
        chash = json.loads((out / "config.json").read_text())["config_hash"]
        assert payload["condensed_config_hash"] == chash

    def test_corrupt_condensed_file(self, tmp_path, config_path, capsys):
        bad = tmp_path / "bad.dcs"
        bad.write_bytes(b"garbage bytes, not a header\n123")
        code = run_cli("eval", "--config", config_path, "--out", str(tmp_path / "e"),
                       "--condensed", str(bad))
        assert code == cli.EXIT_FORMAT


class TestBaselineCommand:
    def test_random_baseline_artifacts(self, tmp_path, config_path):
        out = tmp_path / "base"
        code = run_cli("baseline", "--config", config_path, "--out", str(out),
                       "--method", "random", "--baseline.ipc", "2")
        assert code == 0
        payload = json.loads((out / "report.json").read_text())
        assert payload["method"] == "random"
        coreset, header = SyntheticSet.load(out / "coreset.dcs")
        assert header["method"] == "random"
        assert coreset.images.shape[0] == 4  # 2 classes x ipc 2

    def test_unknown_method_is_usage_error(self, tmp_path, config_path, capsys):
        code = run_cli("baseline", "--config", config_path,
                       "--out", str(tmp_path / "x"), "--method", "mystery")
        assert code == cli.EXIT_CONFIG
        assert "mystery" in capsys.readouterr().out


class TestDiagnoseCommand:
    def test_ratio_per_k(self, tmp_path, config_path):
        out = tmp_path / "run"
        run_cli("condense", "--config", config_path, "--out", str(out))
        dout = tmp_path / "diag"
        code = run_cli("diagnose", "--config", config_path, "--out", str(dout),
                       "--condensed", str(out / "condensed.dcs"), "--k", "5,10,20,50")
        assert code == 0
        payload = json.loads((dout / "consistency.json").read_text())
        assert sorted(payload["ratios"]) == ["10", "20", "5", "50"]
        assert all(0.0 <= v <= 1.0 for v in payload["ratios"].values())

    def test_queue_extractor(self, tmp_path, config_path):
        out = tmp_path / "run"
        run_cli("condense", "--config", config_path, "--out", str(out))
        dout = tmp_path / "diagq"
        code = run_cli("diagnose", "--config", config_path, "--out", str(dout),
                       "--condensed", str(out / "condensed.dcs"),
                       "--queue", str(out / "queue"), "--k", "3")
        assert code == 0
        payload = json.loads((dout / "consistency.json").read_text())
        assert payload["extractor"] == "queue"


class TestContinualCommand:
    def test_curves_csv_shape(self, tmp_path, config_path):
        out = tmp_path / "cont"
        code = run_cli("continual", "--config", config_path, "--out", str(out),
                       "--strategy", "random", "--steps", "2", "--mem-ipc", "2",
                       "--seeds", "0,1")
        assert code == 0
        rows = (out / "curves.csv").read_text().strip().splitlines()
        assert rows[0] == "seed,stage_1,stage_2"
        assert len(rows) == 4  # header + 2 seeds + mean
        payload = json.loads((out / "curves.json").read_text())
        assert np.asarray(payload["curves"]).shape == (2, 2)
