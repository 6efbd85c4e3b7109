"""Config parsing, run execution, artifact emission, registry, CLI surfaces."""

import csv

import numpy as np
import pytest

from invlab import cli, dsp, engine, harness, zoo
from invlab.arrayio import write_array
from invlab.harness import ConfigError
from invlab.interpret import cosine


def _captioner_cfg(out, **overrides):
    cfg = {
        "pipeline": "captioner",
        "target": "a red apple",
        "seed": "1",
        "steps": "60",
        "schedule": "0,30,60",
        "out": str(out),
    }
    cfg.update({k: str(v) for k, v in overrides.items()})
    return cfg


def _write_cfg(path, cfg):
    path.write_text("\n".join(f"{k} = {v}" for k, v in cfg.items()) + "\n")
    return path


class TestConfigParsing:
    def test_flat_key_value_with_comments(self):
        cfg = harness.parse_config_text(
            "# a comment\npipeline = captioner\n\ntarget = a red apple\n")
        assert cfg == {"pipeline": "captioner", "target": "a red apple"}

    def test_malformed_line(self):
        with pytest.raises(ConfigError):
            harness.parse_config_text("pipeline captioner\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError):
            harness.parse_config_text("seed = 1\nseed = 2\n")

    def test_unknown_key_rejected(self, tmp_path):
        cfg = _captioner_cfg(tmp_path, learning_rte="0.1")
        with pytest.raises(ConfigError, match="unknown config keys"):
            harness.build_problem(cfg)

    def test_unknown_pipeline_rejected(self):
        with pytest.raises(ConfigError):
            harness.build_problem({"pipeline": "diffusion"})

    def test_unknown_target_word_rejected(self, tmp_path):
        cfg = _captioner_cfg(tmp_path, target="a zeppelin")
        with pytest.raises(ConfigError, match="vocabulary"):
            harness.build_problem(cfg)

    def test_defaults_fill_in(self, tmp_path):
        problem, echo = harness.build_problem(
            {"pipeline": "captioner", "target": "a red apple", "steps": "50"})
        assert problem.optimizer.kind == "adam"
        assert problem.optimizer.learning_rate == 0.1
        assert problem.max_steps == 50
        assert problem.schedule == (0, 10)  # default trimmed to budget

    def test_digest_stable_serialization(self, tmp_path):
        p1, _ = harness.build_problem(_captioner_cfg(tmp_path))
        p2, _ = harness.build_problem(_captioner_cfg(tmp_path))
        assert engine.problem_digest(p1) == engine.problem_digest(p2)

    def test_grad_clip_key_wires_through(self, tmp_path):
        problem, _ = harness.build_problem(
            _captioner_cfg(tmp_path, grad_clip="0.5", steps="5", schedule="0,5"))
        assert problem.optimizer.max_grad_norm == 0.5
        record = engine.run_inversion(problem)
        assert not record.diverged


class TestRunFromConfig:
    def test_captioner_run_emits_artifacts(self, tmp_path):
        record, run_dir = harness.run_from_config(_captioner_cfg(tmp_path / "runs"))
        assert (run_dir / "manifest.txt").exists()
        assert (run_dir / "loss.csv").exists()
        assert (run_dir / "decoded.csv").exists()
        assert (run_dir / "images.png").exists()
        assert sorted(p.name for p in (run_dir / "checkpoints").iterdir()) == [
            "step_00000000", "step_00000030", "step_00000060"]

    def test_schedule_steps_appear_exactly_once(self, tmp_path):
        _, run_dir = harness.run_from_config(_captioner_cfg(tmp_path / "runs"))
        with open(run_dir / "decoded.csv", newline="") as fh:
            steps = [row["step"] for row in csv.DictReader(fh)]
        assert steps == ["0", "30", "60"]

    def test_rerun_is_byte_identical(self, tmp_path):
        _, dir_a = harness.run_from_config(_captioner_cfg(tmp_path / "a"))
        _, dir_b = harness.run_from_config(_captioner_cfg(tmp_path / "b"))
        assert (dir_a / "loss.csv").read_bytes() == (dir_b / "loss.csv").read_bytes()
        assert (dir_a / "decoded.csv").read_bytes() == (dir_b / "decoded.csv").read_bytes()

    @pytest.mark.parametrize("pipeline", ["captioner", "asr", "generator", "tts"])
    def test_every_preset_reruns_byte_identical(self, tmp_path, pipeline):
        if pipeline in ("captioner", "asr"):
            cfg = {"pipeline": pipeline, "target": "a red apple", "seed": "3",
                   "steps": "15", "schedule": "0,15"}
        elif pipeline == "generator":
            model = zoo.toy_generator(seed=0)
            target = model.forward({"tokens": np.zeros((4, 32)),
                                    "pooled": np.zeros(16)}).data
            write_array(tmp_path / "t.f64", target)
            cfg = {"pipeline": pipeline, "target_path": str(tmp_path / "t.f64"),
                   "seed": "3", "steps": "15", "schedule": "0,15"}
        else:
            model = zoo.toy_tts(seed=0)
            wave = model.forward({"tokens": np.zeros((8, 64))}).data
            write_array(tmp_path / "t.f64", wave)
            cfg = {"pipeline": pipeline, "target_path": str(tmp_path / "t.f64"),
                   "seed": "3", "steps": "15", "schedule": "0,15"}
        _, dir_a = harness.run_from_config(dict(cfg), out_override=tmp_path / "a")
        _, dir_b = harness.run_from_config(dict(cfg), out_override=tmp_path / "b")
        for csv_name in ("loss.csv", "decoded.csv", "tokens.csv"):
            if (dir_a / csv_name).exists():
                assert (dir_a / csv_name).read_bytes() == \
                    (dir_b / csv_name).read_bytes(), csv_name

    def test_generator_run_with_blob_target(self, tmp_path):
        model = zoo.toy_generator(seed=0)
        rng = np.random.default_rng(4)
        truth = {"tokens": rng.standard_normal((4, 32)),
                 "pooled": rng.standard_normal(16)}
        target = model.forward({k: zoo.Tensor(v) for k, v in truth.items()}).data
        write_array(tmp_path / "target.f64", target)
        cfg = {"pipeline": "generator", "target_path": str(tmp_path / "target.f64"),
               "seed": "2", "steps": "40", "schedule": "0,20,40",
               "out": str(tmp_path / "runs")}
        record, run_dir = harness.run_from_config(cfg)
        assert record.loss_history[-1] < record.loss_history[0]
        assert (run_dir / "tokens.csv").exists()
        assert (run_dir / "images.png").exists()
        assert (run_dir / "target.f64").exists()

    def test_tts_run_with_wav_target(self, tmp_path):
        model = zoo.toy_tts(seed=0)
        wave = model.forward({"tokens": np.random.default_rng(5)
                              .standard_normal((8, 64))}).data
        dsp.wav_write(tmp_path / "target.wav", wave, 8000)
        cfg = {"pipeline": "tts", "target_path": str(tmp_path / "target.wav"),
               "seed": "3", "steps": "20", "schedule": "0,20",
               "out": str(tmp_path / "runs")}
        record, run_dir = harness.run_from_config(cfg)
        assert (run_dir / "wave_step_00000020.wav").exists()
        assert (run_dir / "spectrogram_step_00000020.png").exists()
        assert (run_dir / "tokens.csv").exists()

    def test_asr_run_reconstructs_audio(self, tmp_path):
        cfg = {"pipeline": "asr", "target": "a red apple", "seed": "1",
               "steps": "20", "schedule": "0,20", "out": str(tmp_path / "runs")}
        _, run_dir = harness.run_from_config(cfg)
        assert (run_dir / "wave_step_00000000.wav").exists()
        assert (run_dir / "spectrogram_step_00000020.png").exists()

    def test_asr_run_decodes_target_at_toy_budget(self, tmp_path):
        cfg = {"pipeline": "asr", "target": "a red apple", "seed": "1",
               "optimizer": "adamw", "steps": "400", "schedule": "0,400",
               "out": str(tmp_path / "runs")}
        record, run_dir = harness.run_from_config(cfg)
        assert record.checkpoints[400].decoded_text == ["a", "red", "apple"]
        with open(run_dir / "decoded.csv", newline="") as fh:
            last = list(csv.DictReader(fh))[-1]
        assert last["text"] == "a red apple"

    def test_zero_step_run_has_only_initial_checkpoint(self, tmp_path):
        path = _write_cfg(tmp_path / "run.cfg",
                          _captioner_cfg(tmp_path / "runs", steps="0",
                                         schedule="0"))
        assert cli.main(["invert", "--config", str(path)]) == 0
        run_dir = [p for p in (tmp_path / "runs").iterdir() if p.is_dir()][0]
        steps = sorted(p.name for p in (run_dir / "checkpoints").iterdir())
        assert steps == ["step_00000000"]

    def test_base_input_round_trips_through_run_dir(self, tmp_path):
        base = np.random.default_rng(7).standard_normal((32, 32))
        write_array(tmp_path / "base.f64", base)
        cfg = _captioner_cfg(tmp_path / "runs", init="base_input",
                             base_path=str(tmp_path / "base.f64"),
                             steps="10", schedule="0,10")
        record, run_dir = harness.run_from_config(cfg)
        np.testing.assert_array_equal(record.checkpoints[0].inputs["image"], base)
        reloaded = harness.load_run(run_dir)
        assert reloaded.loss_history == record.loss_history

    def test_runs_stay_loadable_after_relocation(self, tmp_path):
        base = np.random.default_rng(7).standard_normal((32, 32))
        write_array(tmp_path / "base.f64", base)
        model = zoo.toy_generator(seed=0)
        target = model.forward({"tokens": np.zeros((4, 32)),
                                "pooled": np.zeros(16)}).data
        write_array(tmp_path / "target.f64", target)
        cfg = {"pipeline": "generator", "target_path": str(tmp_path / "target.f64"),
               "seed": "2", "steps": "10", "schedule": "0,10",
               "out": str(tmp_path / "runs")}
        record, run_dir = harness.run_from_config(cfg)
        moved = tmp_path / "archive" / run_dir.name
        moved.parent.mkdir()
        run_dir.rename(moved)
        (tmp_path / "target.f64").unlink()  # original target gone too
        reloaded = harness.load_run(moved)
        assert reloaded.loss_history == record.loss_history
        engine.resume(reloaded, 5)
        assert len(reloaded.loss_history) == 16

    def test_load_run_verifies_digest(self, tmp_path):
        _, run_dir = harness.run_from_config(_captioner_cfg(tmp_path / "runs"))
        manifest = (run_dir / "manifest.txt").read_text()
        (run_dir / "manifest.txt").write_text(
            manifest.replace("a red apple", "a red plum"))
        with pytest.raises(engine.DigestError):
            harness.load_run(run_dir)

    def test_disk_resume_matches_straight_run(self, tmp_path):
        cfg_half = _captioner_cfg(tmp_path / "a", steps="30", schedule="0,30")
        _, run_dir = harness.run_from_config(cfg_half)
        reloaded = harness.load_run(run_dir)
        engine.resume(reloaded, 30)
        cfg_full = _captioner_cfg(tmp_path / "b", steps="60", schedule="0,30,60")
        straight, _ = harness.run_from_config(cfg_full)
        assert reloaded.loss_history == straight.loss_history


class TestRegistry:
    def test_incremental_equals_rebuild(self, tmp_path):
        root = tmp_path / "runs"
        harness.run_from_config(_captioner_cfg(root, steps="5", schedule="0,5"))
        harness.run_from_config(_captioner_cfg(root, steps="5", schedule="0,5",
                                               seed="9"))
        incremental = harness.read_index(root)
        rebuilt = harness.rebuild_index(root)
        assert [r["run_id"] for r in incremental] == [r["run_id"] for r in rebuilt]
        for a, b in zip(incremental, rebuilt):
            assert a["digest"] == b["digest"]
            assert a["pipeline"] == b["pipeline"]
            assert a["steps"] == b["steps"]
            assert a["diverged"] == b["diverged"]

    def test_identical_configs_get_distinct_run_ids(self, tmp_path):
        root = tmp_path / "runs"
        ra, _ = harness.run_from_config(_captioner_cfg(root, steps="5",
                                                       schedule="0,5"))
        rb, _ = harness.run_from_config(_captioner_cfg(root, steps="5",
                                                       schedule="0,5"))
        assert ra.digest == rb.digest
        assert ra.run_id != rb.run_id
        assert len(harness.read_index(root)) == 2


class TestMetricsOverRuns:
    def test_bert_metric_reaches_one_on_exact_decode(self, tmp_path):
        cfg = _captioner_cfg(tmp_path / "runs", steps="200", schedule="0,100,200")
        record, _ = harness.run_from_config(cfg)
        rows = harness.compute_run_metrics(record, metric="bert")
        final_f1 = [v for s, m, c, v in rows if s == 200 and m == "bert_f1"][0]
        assert final_f1 == 1.0

    def test_generator_clip_metric_increases(self, tmp_path):
        model = zoo.toy_generator(seed=0)
        truth = {"tokens": np.random.default_rng(4).standard_normal((4, 32)),
                 "pooled": np.random.default_rng(5).standard_normal(16)}
        target = model.forward({k: zoo.Tensor(v) for k, v in truth.items()}).data
        write_array(tmp_path / "target.f64", target)
        cfg = {"pipeline": "generator", "target_path": str(tmp_path / "target.f64"),
               "seed": "2", "steps": "100", "schedule": "0,100",
               "out": str(tmp_path / "runs")}
        record, _ = harness.run_from_config(cfg)
        rows = harness.compute_run_metrics(record, metric="clip")
        values = {s: v for s, m, c, v in rows}
        assert values[100] > values[0]
        assert all(0.0 <= v <= 2.5 for v in values.values())

    def test_illegal_metric_for_pipeline(self, tmp_path):
        record, _ = harness.run_from_config(
            _captioner_cfg(tmp_path / "runs", steps="5", schedule="0,5"))
        with pytest.raises(ConfigError):
            harness.compute_run_metrics(record, metric="lsd")


class TestCli:
    def test_invert_ok_exit_code(self, tmp_path, capsys):
        path = _write_cfg(tmp_path / "run.cfg", _captioner_cfg(tmp_path / "runs"))
        assert cli.main(["invert", "--config", str(path)]) == 0
        printed = capsys.readouterr().out.strip()
        assert printed.startswith(str(tmp_path / "runs"))
        assert (tmp_path / "runs" / printed.split("/")[-1] / "loss.csv").exists()

    def test_invert_config_error_exit_2(self, tmp_path, capsys):
        path = _write_cfg(tmp_path / "run.cfg",
                          _captioner_cfg(tmp_path / "runs", bogus_key="1"))
        assert cli.main(["invert", "--config", str(path)]) == 2

    def test_invert_diverged_exit_3(self, tmp_path):
        # linear-head generator at an unstable gd rate blows past the limit
        model = zoo.toy_generator(seed=0, head="linear")
        target = model.forward({"tokens": np.zeros((4, 32)),
                                "pooled": np.zeros(16)}).data
        write_array(tmp_path / "target.f64", target + 10.0)
        cfg = {"pipeline": "generator", "head": "linear",
               "target_path": str(tmp_path / "target.f64"),
               "optimizer": "gd", "learning_rate": "100.0", "seed": "0",
               "steps": "200", "schedule": "0", "out": str(tmp_path / "runs")}
        path = _write_cfg(tmp_path / "run.cfg", cfg)
        assert cli.main(["invert", "--config", str(path)]) == 3
        run_dirs = [p for p in (tmp_path / "runs").iterdir() if p.is_dir()]
        assert run_dirs and (run_dirs[0] / "loss.csv").exists()

    def test_invert_flag_overrides(self, tmp_path):
        path = _write_cfg(tmp_path / "run.cfg", _captioner_cfg(tmp_path / "x"))
        assert cli.main(["invert", "--config", str(path),
                         "--out", str(tmp_path / "y"),
                         "--seed", "5", "--steps", "10",
                         "--schedule", "0,10"]) == 0
        run_dirs = [p for p in (tmp_path / "y").iterdir() if p.is_dir()]
        manifest = engine.read_manifest(run_dirs[0] / "manifest.txt")
        assert manifest["cfg.seed"] == "5"
        assert manifest["steps_done"] == "10"

    def test_env_var_overrides_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv(harness.ENV_OUT_ROOT, str(tmp_path / "env_root"))
        path = _write_cfg(tmp_path / "run.cfg",
                          _captioner_cfg(tmp_path / "cfg_root",
                                         steps="5", schedule="0,5"))
        assert cli.main(["invert", "--config", str(path)]) == 0
        assert (tmp_path / "env_root").exists()
        assert not (tmp_path / "cfg_root").exists()

    def test_decode_tokens_matches_brute_force(self, tmp_path, capsys):
        vocab = zoo.make_vocab(64, 16, seed=0)
        zoo.save_vocab(vocab, tmp_path / "vocab")
        emb = np.random.default_rng(3).standard_normal((4, 16))
        write_array(tmp_path / "emb.f64", emb)
        out_csv = tmp_path / "tokens.csv"
        assert cli.main(["decode-tokens", "--checkpoint", str(tmp_path / "emb.f64"),
                         "--vocab", str(tmp_path / "vocab"), "--k", "2",
                         "--out", str(out_csv)]) == 0
        with open(out_csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8
        best = max(range(64), key=lambda j: cosine(emb[0], vocab.embeddings[j]))
        assert rows[0]["token"] == vocab.tokens[best]

    def test_decode_tokens_width_mismatch_exit_2(self, tmp_path):
        vocab = zoo.make_vocab(64, 16, seed=0)
        zoo.save_vocab(vocab, tmp_path / "vocab")
        write_array(tmp_path / "emb.f64", np.ones((4, 17)))
        assert cli.main(["decode-tokens", "--checkpoint", str(tmp_path / "emb.f64"),
                         "--vocab", str(tmp_path / "vocab")]) == 2

    def test_reconstruct_audio_round_trip(self, tmp_path, capsys):
        cfg = dsp.MelConfig(8000, 256, 64, 16)
        t = np.arange(2048) / 8000
        wave = 0.5 * np.sin(2 * np.pi * 440 * t)
        spec = dsp.log_mel(wave, cfg).array
        write_array(tmp_path / "spec.f64", spec)
        out_wav = tmp_path / "rec.wav"
        assert cli.main(["reconstruct-audio", "--spectrogram",
                         str(tmp_path / "spec.f64"), "--out", str(out_wav),
                         "--iterations", "16", "--sample-rate", "8000",
                         "--n-fft", "256", "--hop", "64"]) == 0
        assert "spectral convergence" in capsys.readouterr().out
        back, rate = dsp.wav_read(out_wav)
        assert rate == 8000 and len(back) > 0

    def test_reconstruct_audio_silence_gives_silent_wav(self, tmp_path):
        # a floor-plane log-mel (pure silence) reconstructs to silence
        cfg = dsp.MelConfig(8000, 256, 64, 16)
        spec = dsp.log_mel(np.zeros(2048), cfg).array
        write_array(tmp_path / "spec.f64", spec)
        out_wav = tmp_path / "rec.wav"
        assert cli.main(["reconstruct-audio", "--spectrogram",
                         str(tmp_path / "spec.f64"), "--out", str(out_wav),
                         "--sample-rate", "8000", "--n-fft", "256",
                         "--hop", "64"]) == 0
        back, _ = dsp.wav_read(out_wav)
        assert not np.any(back)

    def test_reconstruct_audio_geometry_mismatch_exit_2(self, tmp_path):
        write_array(tmp_path / "spec.f64", np.zeros((16, 10)))
        assert cli.main(["reconstruct-audio", "--spectrogram",
                         str(tmp_path / "spec.f64"), "--out",
                         str(tmp_path / "x.wav"), "--preset", "whisper"]) == 2

    def test_metrics_subcommand(self, tmp_path):
        path = _write_cfg(tmp_path / "run.cfg",
                          _captioner_cfg(tmp_path / "runs", category="simple"))
        cli.main(["invert", "--config", str(path)])
        run_dir = [p for p in (tmp_path / "runs").iterdir() if p.is_dir()][0]
        assert cli.main(["metrics", "--run", str(run_dir)]) == 0
        with open(run_dir / "metrics.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows and rows[0]["category"] == "simple"
        steps = sorted({int(r["step"]) for r in rows})
        assert steps == [0, 30, 60]

    def test_metrics_missing_run_exit_2(self, tmp_path):
        assert cli.main(["metrics", "--run", str(tmp_path / "nope")]) == 2

    def test_project_trajectory_subcommand(self, tmp_path):
        model = zoo.toy_generator(seed=0)
        target = model.forward({"tokens": np.zeros((4, 32)),
                                "pooled": np.zeros(16)}).data
        write_array(tmp_path / "target.f64", target)
        cfg = {"pipeline": "generator", "target_path": str(tmp_path / "target.f64"),
               "seed": "2", "steps": "30", "schedule": "0,10,20,30",
               "out": str(tmp_path / "runs")}
        path = _write_cfg(tmp_path / "run.cfg", cfg)
        cli.main(["invert", "--config", str(path)])
        run_dir = [p for p in (tmp_path / "runs").iterdir() if p.is_dir()][0]
        assert cli.main(["project-trajectory", "--run", str(run_dir),
                         "--group", "pooled"]) == 0
        with open(run_dir / "trajectory_pooled.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["step"] for r in rows] == ["0", "10", "20", "30"]

    def test_list_runs_subcommand(self, tmp_path, capsys):
        path = _write_cfg(tmp_path / "run.cfg",
                          _captioner_cfg(tmp_path / "runs", steps="5",
                                         schedule="0,5"))
        cli.main(["invert", "--config", str(path)])
        capsys.readouterr()
        assert cli.main(["list-runs", "--root", str(tmp_path / "runs")]) == 0
        out = capsys.readouterr().out
        assert "captioner" in out and "diverged=false" in out
