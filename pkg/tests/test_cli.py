import csv
from pathlib import Path

import pytest

from mvreal.cli import (EXIT_DIVERGENCE, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE,
                        ABLATION_VARIANTS, RunConfig, cmd_ablate, cmd_eval,
                        cmd_pipeline, cmd_train, main)
from mvreal.errors import ConfigurationError

FAST_PIPELINE = {"image_size": 32, "render_resolution": 32,
                 "n_splats": 8, "fit_steps": 20}


def fast_config(tmp_path, **kwargs):
    defaults = dict(out=str(tmp_path / "out"), steps=25,
                    strategy="feedforward", ablate_steps=40,
                    pipeline=dict(FAST_PIPELINE))
    defaults.update(kwargs)
    return RunConfig(**defaults)


class TestRunConfig:
    def test_from_yaml_round_trip(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("seed: 7\nstrategy: mvdiff\nworkers: 2\n")
        cfg = RunConfig.from_yaml(path)
        assert (cfg.seed, cfg.strategy, cfg.workers) == (7, "mvdiff", 2)

    def test_unknown_top_level_key(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("seed: 1\nlearning_rate: 0.1\n")
        with pytest.raises(ConfigurationError, match="learning_rate"):
            RunConfig.from_yaml(path)

    def test_unknown_nested_keys(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("encoder:\n  m: 32\n  backbone: vit\n")
        with pytest.raises(ConfigurationError, match="backbone"):
            RunConfig.from_yaml(path)
        path.write_text("pipeline:\n  gpu: true\n")
        with pytest.raises(ConfigurationError, match="gpu"):
            RunConfig.from_yaml(path)

    def test_non_mapping_root(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("- a\n- b\n")
        with pytest.raises(ConfigurationError):
            RunConfig.from_yaml(path)

    def test_validate_strategy_and_mode(self):
        with pytest.raises(ConfigurationError):
            RunConfig(strategy="gan").validate()
        with pytest.raises(ConfigurationError):
            RunConfig(client_mode="dryrun").validate()
        with pytest.raises(ConfigurationError):
            RunConfig(steps=0).validate()


class TestMainExitCodes:
    def test_no_command_is_usage(self):
        assert main([]) == EXIT_USAGE

    def test_unknown_strategy_is_usage(self, capsys):
        assert main(["train", "--strategy", "bogus"]) == EXIT_USAGE
        assert "strategy" in capsys.readouterr().err

    def test_mock_live_mutually_exclusive(self):
        assert main(["pipeline", "--mock", "--live"]) == EXIT_USAGE

    def test_missing_config_file_is_usage(self, capsys):
        assert main(["train", "--config", "/nonexistent/cfg.yaml"]) == EXIT_USAGE

    def test_exit_code_constants(self):
        assert (EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_DIVERGENCE) == (0, 1, 2, 3)


class TestCmdPipeline:
    def test_fixture_prompts_complete(self, tmp_path, capsys):
        config = fast_config(tmp_path)
        assert cmd_pipeline(config) == EXIT_OK
        out = capsys.readouterr().out
        assert "5 records complete" in out
        manifest = Path(config.out) / "manifest.jsonl"
        assert manifest.exists()
        for i in range(5):
            assert (Path(config.out) / f"asset-{i:04d}" / "aligned" / "front.png").exists()

    def test_second_invocation_idempotent(self, tmp_path):
        config = fast_config(tmp_path)
        assert cmd_pipeline(config) == EXIT_OK
        manifest = Path(config.out) / "manifest.jsonl"
        before = manifest.read_bytes()
        assert cmd_pipeline(config) == EXIT_OK
        assert manifest.read_bytes() == before

    def test_missing_prompt_file(self, tmp_path, capsys):
        config = fast_config(tmp_path, prompts_file=str(tmp_path / "nope.txt"))
        assert cmd_pipeline(config) == EXIT_USAGE
        assert "not found" in capsys.readouterr().err

    def test_custom_prompt_file(self, tmp_path):
        prompts = tmp_path / "prompts.txt"
        prompts.write_text("a copper kettle\n\na glass bottle\n")
        config = fast_config(tmp_path, prompts_file=str(prompts))
        assert cmd_pipeline(config) == EXIT_OK
        entries = (Path(config.out) / "manifest.jsonl").read_text().splitlines()
        assert len(entries) == 2


class TestCmdTrain:
    def test_writes_outputs(self, tmp_path):
        config = fast_config(tmp_path)
        assert cmd_train(config) == EXIT_OK
        out = Path(config.out)
        assert (out / "checkpoint.pt").exists()
        with open(out / "loss.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == config.steps
        assert [int(r["step"]) for r in rows] == list(range(config.steps))

    def test_resume_continues_step_counter(self, tmp_path, capsys):
        config = fast_config(tmp_path, steps=15)
        cmd_train(config)
        with open(Path(config.out) / "loss.csv", newline="") as f:
            first_rows = list(csv.DictReader(f))

        config.steps = 30
        assert cmd_train(config) == EXIT_OK
        assert "resumed" in capsys.readouterr().out
        with open(Path(config.out) / "loss.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 30
        assert rows[:15] == first_rows
        assert [int(r["step"]) for r in rows] == list(range(30))

    def test_deterministic_loss_history(self, tmp_path):
        a = fast_config(tmp_path / "a")
        b = fast_config(tmp_path / "b")
        cmd_train(a)
        cmd_train(b)
        assert (Path(a.out) / "loss.csv").read_bytes() == \
               (Path(b.out) / "loss.csv").read_bytes()


class TestCmdAblate:
    def test_table_schema_and_probe_ordering(self, tmp_path):
        config = fast_config(tmp_path)
        assert cmd_ablate(config) == EXIT_OK
        with open(Path(config.out) / "ablation.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert [r["variant"] for r in rows] == [name for name, _ in ABLATION_VARIANTS]
        assert len(rows) == 5
        by_name = {r["variant"]: r for r in rows}
        # Dropping the structure-matching term must blunt the probe.
        assert float(by_name["wo_match"]["shift_probe"]) < float(by_name["full"]["shift_probe"])

    def test_rerun_bitwise_identical(self, tmp_path):
        a = fast_config(tmp_path / "a")
        b = fast_config(tmp_path / "b")
        cmd_ablate(a)
        cmd_ablate(b)
        assert (Path(a.out) / "ablation.csv").read_bytes() == \
               (Path(b.out) / "ablation.csv").read_bytes()


class TestCmdEval:
    def test_missing_manifest(self, tmp_path, capsys):
        config = fast_config(tmp_path)
        assert cmd_eval(config) == EXIT_RUNTIME
        assert "manifest not found" in capsys.readouterr().err

    def test_eval_after_pipeline(self, tmp_path, capsys):
        config = fast_config(tmp_path)
        cmd_pipeline(config)
        capsys.readouterr()
        assert cmd_eval(config) == EXIT_OK
        out = capsys.readouterr().out
        assert "assets 5" in out
        report = Path(config.out) / "report"
        assert (report / "metrics.csv").exists()
        assert (report / "summary.txt").exists()


class TestCmdSelftest:
    def test_all_checks_pass(self, capsys):
        assert main(["selftest"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.count("PASS") == 8
        assert "FAIL" not in out
