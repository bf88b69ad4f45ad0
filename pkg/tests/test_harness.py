import csv
import json
import os

import numpy as np
import pytest

from memrl import cli, harness
from memrl.harness import ConfigError, ExperimentConfig


def quick_config(tmp_path, **overrides):
    cfg = ExperimentConfig(out=str(tmp_path)).apply_quick()
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


def read_lines(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestConfig:
    def test_defaults_validate(self):
        ExperimentConfig().validate()

    def test_run_name_format(self):
        cfg = ExperimentConfig(env="semicircle", algo="varibad",
                               strategy="long", seed=7)
        assert cfg.run_name == "semicircle-varibad-long-7"

    def test_ini_round_trip_exact(self):
        cfg = ExperimentConfig(env="velmatch", algo="varibad", seed=3,
                               lr=1.5e-4, hidden="32,16",
                               clear_encoder_only=True)
        assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="section"):
            ExperimentConfig.from_ini("[bogus]\nx = 1\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            ExperimentConfig.from_ini("[run]\nnot_a_key = 1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_ini("[run]\nenv = atari\n")
        with pytest.raises(ValueError):
            ExperimentConfig.from_ini("[run]\nseed = three\n")

    def test_overrides(self):
        cfg = ExperimentConfig()
        cfg.apply_overrides(seed="5", strategy="long", lr="0.001")
        assert cfg.seed == 5 and cfg.strategy == "long" and cfg.lr == 0.001
        with pytest.raises(ConfigError):
            cfg.apply_overrides(bogus="1")

    def test_bool_parsing(self):
        cfg = ExperimentConfig.from_ini("[run]\nclear_encoder_only = yes\n")
        assert cfg.clear_encoder_only is True
        with pytest.raises(ConfigError):
            ExperimentConfig.from_ini("[run]\nclear_encoder_only = maybe\n")


class TestCsv:
    def test_float_repr_round_trip(self, tmp_path):
        values = [0.1, 1 / 3, 1e-300, -2.5000000000000004]
        path = tmp_path / "x.csv"
        harness.write_csv(path, ["v"], [[v] for v in values])
        with open(path, newline="") as fh:
            got = [float(r["v"]) for r in csv.DictReader(fh)]
        assert all(a == b for a, b in zip(got, values))


class TestCheckpoint:
    @pytest.mark.parametrize("algo", ["pearl", "varibad"])
    def test_bit_exact_round_trip(self, tmp_path, algo):
        cfg = quick_config(tmp_path, algo=algo)
        rng = np.random.default_rng(0)
        agent = harness.build_agent(cfg, rng)
        path = tmp_path / "ckpt.json"
        save_rng = np.random.default_rng(99)
        save_rng.standard_normal(5)
        harness.save_checkpoint(path, cfg, agent, 3, save_rng)

        stored, loaded, it, rng2 = harness.load_checkpoint(path)
        assert it == 3 and stored == cfg
        orig = harness.agent_state(agent)
        got = harness.agent_state(loaded)
        assert json.dumps(orig, sort_keys=True) == json.dumps(got, sort_keys=True)
        # rng stream resumes exactly
        assert np.array_equal(save_rng.standard_normal(4),
                              rng2.standard_normal(4))

    def test_architecture_mismatch_rejected(self, tmp_path):
        cfg = quick_config(tmp_path)
        agent = harness.build_agent(cfg, np.random.default_rng(0))
        path = tmp_path / "ckpt.json"
        harness.save_checkpoint(path, cfg, agent, 0, np.random.default_rng(0))
        other = quick_config(tmp_path, latent_dim=cfg.latent_dim + 1)
        with pytest.raises(ConfigError, match="latent_dim"):
            harness.load_checkpoint(path, other)


class TestTraining:
    @pytest.mark.parametrize("algo", ["pearl", "varibad"])
    def test_quick_run_artifacts(self, tmp_path, algo):
        cfg = quick_config(tmp_path, algo=algo)
        run_dir = harness.run_meta_training(cfg)
        assert os.path.isdir(run_dir)
        for name in ("config.ini", "metrics.csv", "checkpoint.json",
                     "buffer.ndjson"):
            assert os.path.exists(os.path.join(run_dir, name)), name
        with open(os.path.join(run_dir, "metrics.csv"), newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == cfg.iterations
        assert [r["iteration"] for r in rows] == ["0", "1"]
        for r in rows:
            assert np.isfinite(float(r["train_return"]))

    def test_training_deterministic_across_directories(self, tmp_path):
        runs = []
        for sub in ("a", "b"):
            cfg = quick_config(tmp_path / sub)
            runs.append(harness.run_meta_training(cfg))
        m1 = read_lines(os.path.join(runs[0], "metrics.csv"))
        m2 = read_lines(os.path.join(runs[1], "metrics.csv"))
        assert m1 == m2

    @pytest.mark.parametrize("algo", ["pearl", "varibad"])
    def test_resume_reproduces_uninterrupted_run(self, tmp_path, algo):
        full = quick_config(tmp_path / "full", algo=algo, iterations=4,
                            checkpoint_interval=1)
        full_dir = harness.run_meta_training(full)

        part = quick_config(tmp_path / "part", algo=algo, iterations=2,
                            checkpoint_interval=1)
        harness.run_meta_training(part)
        part.iterations = 4
        part_dir = harness.run_meta_training(part, resume=True)

        assert read_lines(os.path.join(full_dir, "metrics.csv")) == \
            read_lines(os.path.join(part_dir, "metrics.csv"))

    def test_resume_without_checkpoint_starts_fresh(self, tmp_path):
        cfg = quick_config(tmp_path)
        run_dir = harness.run_meta_training(cfg, resume=True)
        assert os.path.exists(os.path.join(run_dir, "checkpoint.json"))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    cfg = quick_config(tmp, test_goals=2, test_runs=3, test_episodes=2,
                       dump_runs=1)
    run_dir = harness.run_meta_training(cfg)
    return cfg, os.path.join(run_dir, "checkpoint.json")


class TestTesting:
    def test_artifact_shapes(self, trained):
        cfg, ckpt = trained
        run_dir = harness.run_meta_testing(ckpt, cfg)
        with open(os.path.join(run_dir, "embeddings.csv"), newline="") as fh:
            emb = list(csv.DictReader(fh))
        assert len(emb) == cfg.test_goals * cfg.test_runs
        k = cfg.latent_dim
        assert set(emb[0]) == ({"task_id", "run_id", "episode"}
                               | {f"v{i+1}" for i in range(k)}
                               | {f"var{i+1}" for i in range(k)})
        with open(os.path.join(run_dir, "returns.csv"), newline="") as fh:
            rets = list(csv.DictReader(fh))
        assert len(rets) == cfg.test_goals * cfg.test_runs * cfg.test_episodes
        with open(os.path.join(run_dir, "curve.csv"), newline="") as fh:
            curve = list(csv.DictReader(fh))
        assert [r["episode"] for r in curve] == ["1", "2"]
        assert curve[0]["algorithm"] == cfg.algo
        with open(os.path.join(run_dir, "trajectories.ndjson")) as fh:
            recs = [json.loads(line) for line in fh]
        horizon = 60  # point-robot episode length
        assert len(recs) == cfg.test_goals * cfg.dump_runs * \
            cfg.test_episodes * horizon

    def test_curve_matches_returns(self, trained):
        cfg, ckpt = trained
        run_dir = harness.run_meta_testing(ckpt, cfg)
        with open(os.path.join(run_dir, "returns.csv"), newline="") as fh:
            rets = list(csv.DictReader(fh))
        with open(os.path.join(run_dir, "curve.csv"), newline="") as fh:
            curve = list(csv.DictReader(fh))
        for row in curve:
            ep = row["episode"]
            vals = [float(r["return"]) for r in rets if r["episode"] == ep]
            assert float(row["mean_return"]) == pytest.approx(np.mean(vals))


class TestCompare:
    def _fake_run(self, tmp_path, strategy, returns_by_episode):
        cfg = ExperimentConfig(strategy=strategy, out=str(tmp_path))
        run_dir = cfg.run_dir()
        os.makedirs(run_dir)
        cfg.save(os.path.join(run_dir, "config.ini"))
        rows = [[0, run, ep, ret]
                for ep, rets in returns_by_episode.items()
                for run, ret in enumerate(rets)]
        harness.write_csv(os.path.join(run_dir, "returns.csv"),
                          ["task_id", "run_id", "episode", "return"], rows)
        return run_dir

    def test_delta_arithmetic(self, tmp_path):
        d_short = self._fake_run(tmp_path, "short",
                                 {1: [1.0, 3.0], 2: [5.0, 7.0]})
        d_long = self._fake_run(tmp_path, "long",
                                {1: [2.0, 2.0], 2: [1.0, 3.0]})
        out = tmp_path / "cmp.csv"
        rows, summary = harness.compare([d_short, d_long], out)
        assert rows[0][0] == 1 and rows[0][1] == pytest.approx(0.0)
        assert rows[1][0] == 2 and rows[1][1] == pytest.approx(4.0)
        assert rows[0][2] <= rows[0][1] <= rows[0][3]  # CI brackets delta
        assert "episode 2" in summary
        assert os.path.exists(out)

    def test_mismatched_envs_rejected(self, tmp_path):
        d1 = self._fake_run(tmp_path, "short", {1: [1.0]})
        cfg = ExperimentConfig(strategy="long", env="semicircle",
                               out=str(tmp_path))
        run_dir = cfg.run_dir()
        os.makedirs(run_dir)
        cfg.save(os.path.join(run_dir, "config.ini"))
        harness.write_csv(os.path.join(run_dir, "returns.csv"),
                          ["task_id", "run_id", "episode", "return"],
                          [[0, 0, 1, 1.0]])
        with pytest.raises(ConfigError):
            harness.compare([d1, run_dir], tmp_path / "cmp.csv")

    def test_single_strategy_rejected(self, tmp_path):
        d1 = self._fake_run(tmp_path, "short", {1: [1.0]})
        with pytest.raises(ConfigError):
            harness.compare([d1], tmp_path / "cmp.csv")


class TestOracleEval:
    def test_benchmark_rows_and_improvement(self, tmp_path):
        cfg = quick_config(tmp_path, test_goals=2, test_runs=2,
                           test_episodes=2)
        out = tmp_path / "oracle.csv"
        rows, agreement = harness.oracle_eval(cfg, out, n_goals=10)
        assert agreement is None
        assert len(rows) == cfg.test_goals * cfg.test_runs * cfg.test_episodes
        ep1 = np.mean([r[3] for r in rows if r[2] == 1])
        ep2 = np.mean([r[3] for r in rows if r[2] == 2])
        assert ep2 > ep1  # the exact posterior carries over to episode 2

    def test_velmatch_rejected(self, tmp_path):
        cfg = quick_config(tmp_path, env="velmatch")
        with pytest.raises(ConfigError):
            harness.oracle_eval(cfg, tmp_path / "oracle.csv")


class TestCli:
    def test_train_test_project_pipeline(self, tmp_path, capsys):
        out = str(tmp_path)
        assert cli.main(["train", "--quick", "--out", out, "--seed", "0"]) == 0
        assert cli.main(["test", "--quick", "--out", out, "--seed", "0"]) == 0
        emb = os.path.join(out, "point-pearl-short-0", "embeddings.csv")
        assert cli.main(["project", emb, "--method", "pca"]) == 0
        proj = emb.replace(".csv", ".pca.csv")
        with open(proj, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert {"p1", "p2"} <= set(rows[0])

    def test_compare_cli(self, tmp_path, capsys):
        out = str(tmp_path)
        dirs = []
        for strategy in ("short", "long"):
            cli.main(["train", "--quick", "--out", out, "--strategy", strategy])
            cli.main(["test", "--quick", "--out", out, "--strategy", strategy])
            dirs.append(os.path.join(out, f"point-pearl-{strategy}-0"))
        cmp_path = os.path.join(out, "cmp.csv")
        assert cli.main(["compare", *dirs, "--out", cmp_path]) == 0
        assert os.path.exists(cmp_path)
        assert "delta" in capsys.readouterr().out

    def test_oracle_cli(self, tmp_path, capsys):
        out = str(tmp_path)
        code = cli.main(["oracle", "--quick", "--out", out, "--goals", "4"])
        assert code == 0
        assert os.path.exists(os.path.join(out, "oracle-point.csv"))
        assert "mean return" in capsys.readouterr().out

    def test_missing_checkpoint_is_config_error(self, tmp_path):
        assert cli.main(["test", "--quick", "--out", str(tmp_path)]) == 2

    def test_bad_config_file_is_config_error(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[run]\nenv = atari\n")
        assert cli.main(["train", "--config", str(bad)]) == 2

    def test_train_determinism_byte_identical(self, tmp_path):
        paths = []
        for sub in ("x", "y"):
            out = str(tmp_path / sub)
            assert cli.main(["train", "--quick", "--out", out]) == 0
            paths.append(os.path.join(out, "point-pearl-short-0", "metrics.csv"))
        assert read_lines(paths[0]) == read_lines(paths[1])
