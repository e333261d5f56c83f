"""Config parsing, CLI subcommands and exit codes, reproducibility of the
experiment pipeline."""

import json
import os

import numpy as np
import pytest

from cbmlab.cli import main
from cbmlab.config import ConfigError, REFERENCE_CONFIG, load_config
from cbmlab.experiment import (
    ExperimentConfig, build_dataset, config_hash, filtered_samples, run_goal,
    train_model, write_csv,
)
from cbmlab.model import TrainConfig
from dataclasses import replace


def write_config(tmp_path, text):
    p = tmp_path / "exp.ini"
    p.write_text(text)
    return str(p)


SMALL = """\
[dataset]
preset = blob
blob_n = 80

[train]
epochs = 2

[rcl]
epochs = 2
inner_iters = 1

[attack]
n_steps = 3
n_samples = 2

[experiment]
seeds = 0
"""


class TestConfig:
    def test_reference_config_parses_to_defaults(self, tmp_path):
        path = write_config(tmp_path, REFERENCE_CONFIG)
        cfg = load_config(path)
        assert config_hash(cfg) == config_hash(ExperimentConfig())

    def test_empty_file_gives_defaults(self, tmp_path):
        path = write_config(tmp_path, "")
        # configparser reads an empty file fine; all defaults apply
        assert config_hash(load_config(path)) == config_hash(ExperimentConfig())

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/exp.ini")

    def test_unknown_section_rejected(self, tmp_path):
        path = write_config(tmp_path, "[dataset]\npreset = blob\n[oops]\nx = 1\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_value_rejected(self, tmp_path):
        path = write_config(tmp_path, "[train]\nepochs = tuesday\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_invalid_semantics_rejected(self, tmp_path):
        path = write_config(tmp_path, "[train]\nparadigm = fused\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_overrides_apply(self, tmp_path):
        path = write_config(tmp_path, SMALL)
        cfg = load_config(path)
        assert cfg.blob_n == 80
        assert cfg.train.epochs == 2
        assert cfg.attack.n_steps == 3
        assert cfg.seeds == (0,)


class TestConfigHash:
    def test_stable_across_instances(self):
        assert config_hash(ExperimentConfig()) == config_hash(ExperimentConfig())

    def test_sensitive_to_any_field(self):
        base = config_hash(ExperimentConfig())
        assert config_hash(ExperimentConfig(blob_n=2501)) != base
        assert config_hash(ExperimentConfig(
            train=TrainConfig(paradigm="joint", epochs=15))) != base


class TestCsv:
    def test_write_csv_layout(self, tmp_path):
        path = str(tmp_path / "rows.csv")
        write_csv(path, [("joint/3", "erasure", "flip_rate", 50.0)])
        lines = open(path).read().splitlines()
        assert lines[0] == "sample_id,attack,metric,value"
        assert lines[1] == "joint/3,erasure,flip_rate,50"


class TestCli:
    def test_print_config_round_trips(self, tmp_path, capsys):
        assert main(["print-config"]) == 0
        text = capsys.readouterr().out
        path = write_config(tmp_path, text)
        assert config_hash(load_config(path)) == config_hash(ExperimentConfig())

    def test_synth_data(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL)
        out = str(tmp_path / "out")
        assert main(["synth-data", "--config", cfg, "--out", out]) == 0
        data = np.load(os.path.join(out, "dataset.npz"))
        assert data["train_x"].shape == (64, 1, 12, 12)
        assert data["train_c"].shape == (64, 12)

    def test_train_writes_checkpoint(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        out = str(tmp_path / "out")
        assert main(["train", "--config", cfg, "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "joint-seed0.ckpt"))

    def test_rcl_train_writes_checkpoint(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        out = str(tmp_path / "out")
        assert main(["rcl-train", "--config", cfg, "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "rcl-hybrid-seed0.ckpt"))

    def test_attack_then_report(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL)
        out = str(tmp_path / "out")
        assert main(["attack", "--config", cfg, "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "seed0.csv"))
        assert os.path.exists(os.path.join(out, "summary.csv"))
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert manifest["config_hash"]
        assert manifest["failed_seeds"] == {}
        assert main(["report", "--config", cfg, "--out", out]) == 0
        report = json.load(open(os.path.join(out, "report.json")))
        assert report["metrics"]

    def test_attack_single_checkpoint(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL)
        out = str(tmp_path / "out")
        assert main(["train", "--config", cfg, "--out", out]) == 0
        ckpt = os.path.join(out, "joint-seed0.ckpt")
        assert main(["attack", "--config", cfg, "--out", out,
                     "--checkpoint", ckpt]) == 0
        assert os.path.exists(os.path.join(out, "attack-joint-seed0.csv"))

    def test_attack_missing_checkpoint_fails(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL)
        assert main(["attack", "--config", cfg, "--out", str(tmp_path / "o"),
                     "--checkpoint", str(tmp_path / "nope.ckpt")]) == 2

    def test_config_error_exit_code(self, tmp_path, capsys):
        path = write_config(tmp_path, "[train]\nparadigm = fused\n")
        assert main(["train", "--config", path]) == 1

    def test_runtime_error_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "[dataset]\npreset = cmnist\n")
        env_backup = os.environ.pop("CBMLAB_DATA_ROOT", None)
        try:
            assert main(["train", "--config", cfg,
                         "--out", str(tmp_path / "o")]) == 2
        finally:
            if env_backup is not None:
                os.environ["CBMLAB_DATA_ROOT"] = env_backup

    def test_report_without_runs_fails(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL)
        assert main(["report", "--config", cfg,
                     "--out", str(tmp_path / "empty")]) == 2


@pytest.fixture(scope="module")
def small_world():
    cfg = ExperimentConfig(blob_n=150,
                           train=TrainConfig(paradigm="joint", epochs=3),
                           n_attack_samples=4)
    cfg = replace(cfg, attack=replace(cfg.attack, n_steps=10))
    split = build_dataset(cfg, 0)
    model = train_model(cfg, split, 0)
    kept = filtered_samples(model, split.test, cfg.n_attack_samples, 0)
    return cfg, model, kept


class TestReproducibility:
    def test_same_seed_reproduces_records(self, small_world):
        cfg, model, kept = small_world
        spec = replace(cfg.attack, goal="introduction")
        a = run_goal(model, kept, spec)
        b = run_goal(model, kept, spec)
        assert [(sid, recs) for sid, recs, _ in a] == \
               [(sid, recs) for sid, recs, _ in b]

    def test_worker_count_does_not_change_results(self, small_world):
        cfg, model, kept = small_world
        spec = replace(cfg.attack, goal="erasure")
        serial = run_goal(model, kept, spec, workers=1)
        threaded = run_goal(model, kept, spec, workers=4)
        assert [(sid, recs) for sid, recs, _ in serial] == \
               [(sid, recs) for sid, recs, _ in threaded]
        for (_, _, outs_a), (_, _, outs_b) in zip(serial, threaded):
            for oa, ob in zip(outs_a, outs_b):
                assert np.array_equal(oa.x_perturbed, ob.x_perturbed)

    def test_filtered_samples_seeded(self, small_world):
        cfg, model, kept = small_world
        split = build_dataset(cfg, 0)
        again = filtered_samples(model, split.test, cfg.n_attack_samples, 0)
        assert [sid for sid, _ in kept] == [sid for sid, _ in again]
