import numpy as np
import pytest

from protofed.cli import main, run_experiment, run_preset
from protofed.config import (
    ConfigError,
    PRESET_NAMES,
    config_from_dict,
    config_to_dict,
    parse_config,
    preset_variants,
    serialize_config,
)
from protofed.metrics import MetricsLog, RoundRecord, feature_variance, write_rounds_csv

FAST_OVERRIDES = (
    "rounds=2",
    "seeds=[0]",
    "data.domains=[{name: a, sigma: 0.2, transform_seed: 1, n_train: 20, n_test: 20},"
    " {name: b, sigma: 0.7, transform_seed: 2, n_train: 20, n_test: 20}]",
    "data.num_classes=3",
    "model.input_dim=6",
    "model.hidden_dims=[8]",
    "model.feature_dim=6",
)


class TestParseConfig:
    def test_empty_file_gives_paper_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        cfg = parse_config(path)
        assert cfg.loss.temperature == 0.07
        assert cfg.loss.sparsity == 0.25
        assert cfg.loss.proto_weight == 100.0
        assert cfg.local_epochs == 2
        assert cfg.optimizer.learning_rate == 0.01
        assert cfg.optimizer.momentum == 0.5
        assert cfg.optimizer.weight_decay == 1e-5
        assert cfg.batch_size == 32

    def test_sparsity_bound_error_names_interval(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("loss:\n  sparsity: 1.5\n")
        with pytest.raises(ConfigError, match=r"\(0, 1\]"):
            parse_config(path)

    def test_dp_sgd_rejected_clearly(self, tmp_path):
        path = tmp_path / "dp.yaml"
        path.write_text("privacy:\n  enabled: true\n  dp_sgd: true\n")
        with pytest.raises(ConfigError, match="dp_sgd"):
            parse_config(path)

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "unk.yaml"
        path.write_text("optimizer:\n  lr: 0.1\n")
        with pytest.raises(ConfigError, match="optimizer.lr"):
            parse_config(path)

    def test_round_trip_idempotent(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("rounds: 7\nloss:\n  sparsity: 0.5\n")
        cfg = parse_config(path)
        once = serialize_config(cfg)
        twice = serialize_config(config_from_dict(__import__("yaml").safe_load(once)))
        assert once == twice

    def test_set_overrides(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("")
        cfg = parse_config(path, overrides=("loss.sparsity=0.5", "rounds=3", "seeds=[7, 8]"))
        assert cfg.loss.sparsity == 0.5
        assert cfg.rounds == 3
        assert cfg.seeds == (7, 8)

    def test_override_unknown_path(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("")
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config(path, overrides=("loss.alpha=0.5",))

    def test_duplicate_domain_names_rejected(self):
        with pytest.raises(ConfigError, match="unique"):
            config_from_dict({"data": {"domains": [{"name": "x"}, {"name": "x"}]}})

    def test_every_preset_builds(self):
        for name in PRESET_NAMES:
            variants = preset_variants(name)
            assert variants
            for label, cfg in variants:
                assert cfg.rounds >= 0
                # round-trip through the dict schema proves only real fields are set
                assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            preset_variants("table9")


class TestFeatureVariance:
    def test_identical_samples_zero(self):
        feats = {0: np.tile([1.0, 2.0], (5, 1)), 1: np.tile([3.0, 1.0], (4, 1))}
        assert feature_variance(feats) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_pair_hand_value(self):
        # normalized features (1,0) and (0,1): center (.5,.5), each at sqrt(.5)
        feats = {0: np.array([[1.0, 0.0], [0.0, 1.0]])}
        assert feature_variance(feats) == pytest.approx(np.sqrt(0.5), abs=1e-12)

    def test_duplication_invariance(self, rng):
        feats = {0: rng.uniform(0, 1, (6, 4)), 1: rng.uniform(0, 1, (3, 4))}
        doubled = {m: np.vstack([v, v]) for m, v in feats.items()}
        assert feature_variance(feats) == pytest.approx(feature_variance(doubled), abs=1e-12)

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            feature_variance({})


class TestCsvEmission:
    def empty_log(self):
        return MetricsLog(domain_names=["a", "b"], initial_domain_acc=[0.1, 0.2], initial_avg_acc=0.15)

    def one_round_log(self):
        log = self.empty_log()
        log.rounds.append(
            RoundRecord(1, (0.5, 0.25), 0.375, 0.4, 0.6789, (2.0, 3.5), 20, 8, 1234)
        )
        return log

    def test_empty_log_header_only(self, tmp_path):
        path = write_rounds_csv(self.empty_log(), tmp_path / "r.csv")
        lines = path.read_bytes().split(b"\r\n")
        assert lines[0].startswith(b"round,acc_a,acc_b,acc_avg,acc_global,feature_variance")
        assert lines[1:] == [b""]

    def test_one_round_two_lines(self, tmp_path):
        path = write_rounds_csv(self.one_round_log(), tmp_path / "r.csv")
        rows = path.read_text().splitlines()
        assert len(rows) == 2
        assert rows[1].split(",")[0] == "1"
        assert "0.6789" in rows[1]

    def test_rewrite_byte_identical(self, tmp_path):
        a = write_rounds_csv(self.one_round_log(), tmp_path / "a.csv")
        b = write_rounds_csv(self.one_round_log(), tmp_path / "b.csv")
        assert a.read_bytes() == b.read_bytes()


class TestCliSurface:
    def test_validate_prints_canonical_config(self, tmp_path, capsys):
        path = tmp_path / "c.yaml"
        path.write_text("rounds: 4\n")
        assert main(["validate", str(path)]) == 0
        out = capsys.readouterr().out
        assert "rounds: 4" in out

    def test_validate_rejects_bad_config(self, tmp_path, capsys):
        path = tmp_path / "c.yaml"
        path.write_text("loss:\n  sparsity: 2.0\n")
        assert main(["validate", str(path)]) == 2
        assert "(0, 1]" in capsys.readouterr().err

    def test_run_emits_round_and_summary_csvs(self, tmp_path):
        cfg_path = tmp_path / "c.yaml"
        cfg_path.write_text("")
        out = tmp_path / "out"
        sets = [f"--set={s}" for s in FAST_OVERRIDES]
        assert main(["run", str(cfg_path), "--out", str(out), *sets]) == 0
        files = sorted(p.name for p in out.iterdir())
        assert "summary.csv" in files
        assert any(name.startswith("run_rounds_00_seed0") for name in files)

    def test_identical_seed_entries_give_identical_csvs(self, tmp_path):
        cfg_path = tmp_path / "c.yaml"
        cfg_path.write_text("")
        out = tmp_path / "out"
        sets = [f"--set={s}" for s in FAST_OVERRIDES if not s.startswith("seeds")]
        assert main(["run", str(cfg_path), "--out", str(out), "--set=seeds=[7, 7]", *sets]) == 0
        a = (out / "run_rounds_00_seed7.csv").read_bytes()
        b = (out / "run_rounds_01_seed7.csv").read_bytes()
        assert a == b

    def test_runtime_failure_exits_one(self, tmp_path, capsys):
        cfg_path = tmp_path / "c.yaml"
        cfg_path.write_text("")
        blocker = tmp_path / "not_a_dir"
        blocker.write_text("occupied")
        sets = [f"--set={s}" for s in FAST_OVERRIDES]
        assert main(["run", str(cfg_path), "--out", str(blocker), *sets]) == 1
        assert "error" in capsys.readouterr().err

    def test_dump_dataset(self, tmp_path):
        cfg_path = tmp_path / "c.yaml"
        cfg_path.write_text("")
        out = tmp_path / "data"
        sets = [f"--set={s}" for s in FAST_OVERRIDES]
        assert main(["dump-dataset", str(cfg_path), "--out", str(out), *sets]) == 0
        assert (out / "train.csv").exists() and (out / "test.csv").exists()
        header = (out / "train.csv").read_text().splitlines()[0]
        assert header.startswith("client_id,domain_id,label,x0")

    def test_summary_matches_recomputation_from_round_csvs(self, tmp_path):
        import csv as csvmod

        cfg_path = tmp_path / "c.yaml"
        cfg_path.write_text("")
        out = tmp_path / "out"
        sets = [f"--set={s}" for s in FAST_OVERRIDES if not s.startswith("seeds")]
        assert main(["run", str(cfg_path), "--out", str(out), "--set=seeds=[0, 1, 2]", *sets]) == 0

        finals = []
        for p in sorted(out.glob("run_rounds_*.csv")):
            with open(p, newline="") as fh:
                rows = list(csvmod.DictReader(fh))
            finals.append(float(rows[-1]["acc_avg"]))
        with open(out / "summary.csv", newline="") as fh:
            summary = list(csvmod.DictReader(fh))[0]
        assert float(summary["acc_avg_mean"]) == pytest.approx(np.mean(finals), abs=1e-4)
        assert float(summary["acc_avg_std"]) == pytest.approx(np.std(finals, ddof=1), abs=1e-4)

    def test_preset_runs_and_compares(self, tmp_path):
        out = tmp_path / "p"
        sets = [f"--set={s}" for s in FAST_OVERRIDES]
        assert main(["preset", "table4", "--out", str(out), *sets]) == 0
        comparison = out / "table4_comparison.csv"
        assert comparison.exists()
        rows = comparison.read_text().splitlines()
        assert len(rows) == 3  # header + two variants
        assert rows[1].startswith("global_clustering")
        assert rows[2].startswith("broadcast_locals")
