"""Synthetic data, config handling, staged runs, CLI, determinism."""

from __future__ import annotations

import json
import subprocess

import numpy as np
import pytest
import yaml

from affectpipe.cli import main
from affectpipe.errors import (
    AffectPipeError,
    AlignmentError,
    ConfigError,
    DataFormatError,
    MissingInputError,
    SolverError,
    TaskMismatchError,
)
from affectpipe.pipeline import (
    config_hash,
    evaluate_files,
    load_config,
    run_pipeline,
)
from affectpipe.synth import SyntheticSpec, synth_generate, synth_tracks
from affectpipe.timeline import FrameTrack, SmoothingSpec, hamming_smooth, write_track_csv
from affectpipe.windowing import write_label_csv


def _write_config(tmp_path, name="cfg.yaml", **overrides):
    cfg = {
        "task": "expr",
        "seed": 7,
        "paths": {
            "embeddings": str(tmp_path / "data" / "embeddings.csv"),
            "labels": str(tmp_path / "data" / "labels.csv"),
            "vad": str(tmp_path / "data" / "vad.csv"),
        },
        "split": {"dev_videos": ["v003"]},
        "window": {"window_seconds": 2.0, "hop_seconds": 2.0},
        "synth": {
            "n_videos": 4,
            "frames_per_video": 320,
            "embedding_dim": 6,
            "class_count": 4,
            "noise": 0.0,
            "block_seconds": 16.0,
        },
        "output": {"dir": str(tmp_path / "runs")},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def _synth_from(config):
    synth_generate(config.synth, config.embeddings, config.labels, config.vad)


class TestSyntheticData:
    def test_noise_zero_collapses_each_class_to_its_mean(self):
        spec = SyntheticSpec(n_videos=2, frames_per_video=100, embedding_dim=4,
                             class_count=3, noise=0.0, seed=1, block_seconds=4.0)
        tracks, labels, _ = synth_tracks(spec)
        for track in tracks:
            lab = np.array([labels[track.video_id][t][0] for t in range(100)])
            for c in np.unique(lab):
                rows = track.values[lab == c]
                np.testing.assert_array_equal(rows, np.tile(rows[0], (len(rows), 1)))

    def test_va_trajectory_stays_bounded(self):
        spec = SyntheticSpec(n_videos=3, frames_per_video=500, embedding_dim=4,
                             task="va", seed=2)
        _, labels, _ = synth_tracks(spec)
        for per_video in labels.values():
            values = np.array(list(per_video.values()))
            assert values.min() >= -1.0 and values.max() <= 1.0

    def test_label_file_has_one_row_per_frame(self, tmp_path):
        spec = SyntheticSpec(n_videos=2, frames_per_video=100, embedding_dim=3, seed=0)
        paths = synth_generate(spec, tmp_path / "e.csv", tmp_path / "l.csv")
        lines = paths["labels"].read_text().strip().splitlines()
        assert len(lines) == 1 + 2 * 100

    def test_same_seed_same_bytes(self, tmp_path):
        spec = SyntheticSpec(n_videos=2, frames_per_video=50, embedding_dim=3, seed=9)
        a = synth_generate(spec, tmp_path / "a_e.csv", tmp_path / "a_l.csv",
                           tmp_path / "a_v.csv")
        b = synth_generate(spec, tmp_path / "b_e.csv", tmp_path / "b_l.csv",
                           tmp_path / "b_v.csv")
        for key in a:
            assert a[key].read_bytes() == b[key].read_bytes()

    def test_blocks_cover_every_class(self):
        spec = SyntheticSpec(n_videos=3, frames_per_video=400, embedding_dim=3,
                             class_count=8, seed=4, block_seconds=10.0)
        _, labels, _ = synth_tracks(spec)
        for per_video in labels.values():
            seen = {int(v[0]) for v in per_video.values()}
            assert seen == set(range(8))

    def test_priors_validation(self):
        with pytest.raises(ValueError, match="priors"):
            SyntheticSpec(class_count=3, priors=(0.5, 0.5))
        with pytest.raises(ValueError):
            SyntheticSpec(class_count=2, priors=(0.9, 0.2))

    def test_partial_voicing_produces_runs(self):
        spec = SyntheticSpec(n_videos=1, frames_per_video=400, embedding_dim=3,
                             voiced_fraction=0.6, seed=5)
        _, _, masks = synth_tracks(spec)
        voiced = np.asarray(masks[0].voiced)
        assert voiced.any() and not voiced.all()
        assert voiced[0]  # runs start voiced


class TestConfig:
    def test_defaults_fill_everything_but_task_and_paths(self, tmp_path):
        path = tmp_path / "minimal.yaml"
        path.write_text(yaml.safe_dump({
            "task": "expr",
            "paths": {"embeddings": "e.csv", "labels": "l.csv"},
            "split": {"dev_videos": ["d"]},
        }))
        config = load_config(path)
        assert config.fps_target == 5.0
        assert config.window_seconds == 4.0 and config.hop_seconds == 2.0
        assert config.postprocess.smooth_seconds == 0.5
        assert config.kelm.kernel == "rbf" and config.kelm.weighted
        assert config.normalization == "global_minmax"
        assert config.fusion.method == "mean" and config.fusion.pool_size == 10000
        assert config.functionals == ("mean", "max", "min")
        assert config.seed == 0 and config.workers == 1

    def test_flag_overrides_beat_file_values(self, tmp_path):
        path = _write_config(tmp_path, seed=3)
        config = load_config(path, seed=11, workers=4)
        assert config.seed == 11 and config.workers == 4

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("task: expr\nwindowing: {}\n")
        with pytest.raises(ConfigError, match="unknown"):
            load_config(path)

    def test_bad_enums_rejected(self, tmp_path):
        for snippet in ("task: banana", "normalization: zscore",
                        "fusion: {method: stacking}"):
            path = tmp_path / "c.yaml"
            path.write_text(snippet + "\n")
            with pytest.raises(ConfigError):
                load_config(path)

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            load_config(tmp_path / "absent.yaml")

    def test_kelm_without_dev_split_rejected(self, tmp_path):
        path = _write_config(tmp_path, split={"dev_videos": []})
        with pytest.raises(ConfigError, match="dev"):
            load_config(path)

    def test_disabled_kelm_needs_base_predictions(self, tmp_path):
        path = _write_config(tmp_path, kelm={"enabled": False})
        with pytest.raises(ConfigError, match="base"):
            load_config(path)

    def test_hash_ignores_output_dir_and_workers(self, tmp_path):
        a = load_config(_write_config(tmp_path, "a.yaml"))
        b = load_config(_write_config(tmp_path, "b.yaml",
                                      output={"dir": str(tmp_path / "other")}),
                        workers=8)
        c = load_config(_write_config(tmp_path, "c.yaml", seed=8))
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(c)

    def test_exit_codes_are_distinct_per_family(self):
        families = [AffectPipeError, ConfigError, MissingInputError, AlignmentError,
                    TaskMismatchError, DataFormatError, SolverError]
        codes = [f.exit_code for f in families]
        assert codes == [1, 2, 3, 4, 5, 6, 7]


class TestEvaluateFiles:
    def _labels(self, tmp_path, name, rows, task="expr"):
        path = tmp_path / name
        write_label_csv(path, rows, task=task)
        return path

    def test_identical_expr_is_perfect(self, tmp_path):
        rows = {"a": {t: np.array([float(t % 4)]) for t in range(40)}}
        truth = self._labels(tmp_path, "t.csv", rows)
        pred = self._labels(tmp_path, "p.csv", rows)
        report = evaluate_files(pred, truth, "expr")
        assert report.accuracy == 1.0
        # classes 4..7 never occur, and absent classes count as 0 in the macro
        assert report.macro_f1 == 0.5
        assert all(report.per_class[c].f1 == 1.0 for c in range(4))

    def test_identical_va_is_perfect(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = {"a": {t: np.clip(rng.normal(size=2), -1, 1) for t in range(50)}}
        truth = self._labels(tmp_path, "t.csv", rows, task="va")
        pred = self._labels(tmp_path, "p.csv", rows, task="va")
        report = evaluate_files(pred, truth, "va")
        assert report.ccc_mean == 1.0

    def test_row_order_does_not_matter(self, tmp_path):
        rng = np.random.default_rng(1)
        rows = {f"v{k}": {t: np.array([float(rng.integers(0, 4))]) for t in range(30)}
                for k in range(2)}
        pred_rows = {v: {t: np.array([float(rng.integers(0, 4))]) for t in range(30)}
                     for v in rows}
        truth = self._labels(tmp_path, "t.csv", rows)
        pred = self._labels(tmp_path, "p.csv", pred_rows)
        baseline = evaluate_files(pred, truth, "expr")
        lines = pred.read_text().strip().splitlines()
        shuffled = [lines[0]] + list(np.random.default_rng(2).permutation(lines[1:]))
        # a shuffled file has non-contiguous frames per video, which the
        # dict-based reader accepts; the join is purely key-based
        (tmp_path / "p2.csv").write_text("\n".join(shuffled) + "\n")
        again = evaluate_files(tmp_path / "p2.csv", truth, "expr")
        assert again == baseline

    def test_truth_invalid_rows_dropped(self, tmp_path):
        pred = self._labels(
            tmp_path, "p.csv", {"a": {t: np.array([0.0]) for t in range(4)}}
        )
        truth = tmp_path / "t.csv"
        truth.write_text(
            "video_id,frame,label\na,0,0\na,1,0\na,2,9\na,3,1\n"
        )
        report = evaluate_files(pred, truth, "expr")
        # frame 2 is invalid in truth, so 3 frames remain: 2 hits, 1 miss
        assert report.accuracy == pytest.approx(2.0 / 3.0)

    def test_empty_join_is_an_error(self, tmp_path):
        truth = self._labels(tmp_path, "t.csv", {"a": {0: np.array([0.0])}})
        pred = self._labels(tmp_path, "p.csv", {"b": {0: np.array([0.0])}})
        with pytest.raises(AlignmentError, match="share no"):
            evaluate_files(pred, truth, "expr")

    def test_wrong_task_file_is_a_task_mismatch(self, tmp_path):
        rows = {"a": {0: np.array([0.1, 0.2]), 1: np.array([0.0, 0.0])}}
        va_file = self._labels(tmp_path, "va.csv", rows, task="va")
        with pytest.raises(TaskMismatchError):
            evaluate_files(va_file, va_file, "expr")


class TestRunPipeline:
    def test_expr_run_reports_in_range_and_writes_manifest(self, tmp_path):
        config = load_config(_write_config(tmp_path, synth={"noise": 1.0}))
        _synth_from(config)
        result = run_pipeline(config)
        assert 0.0 <= result.report.macro_f1 <= 1.0
        manifest = json.loads((result.run_dir / "manifest.json").read_text())
        assert manifest["outputs_hash"] == result.manifest["outputs_hash"]
        assert "windows.csv" in manifest["outputs"]

    def test_separable_run_is_perfect_on_held_out_video(self, tmp_path):
        # 640 frames at 5 fps with 16 s blocks = 8 blocks; every class shows
        # up once per video and each block spans whole 2 s windows
        config = load_config(_write_config(
            tmp_path,
            synth={"n_videos": 4, "frames_per_video": 640, "embedding_dim": 6,
                   "class_count": 8, "noise": 0.0, "block_seconds": 16.0},
        ))
        _synth_from(config)
        result = run_pipeline(config)
        assert result.report.macro_f1 == 1.0
        assert result.report.accuracy == 1.0

    def test_rerun_same_seed_identical_manifest(self, tmp_path):
        path_a = _write_config(tmp_path, "a.yaml")
        path_b = _write_config(tmp_path, "b.yaml",
                               output={"dir": str(tmp_path / "runs_b")})
        config_a = load_config(path_a)
        _synth_from(config_a)
        res_a = run_pipeline(config_a)
        res_b = run_pipeline(load_config(path_b))
        assert (res_a.run_dir / "manifest.json").read_bytes() == (
            res_b.run_dir / "manifest.json"
        ).read_bytes()

    def test_worker_count_does_not_change_outputs(self, tmp_path):
        path = _write_config(tmp_path)
        config = load_config(path)
        _synth_from(config)
        res_1 = run_pipeline(load_config(path, workers=1,
                                         out_dir=str(tmp_path / "w1")))
        res_2 = run_pipeline(load_config(path, workers=3,
                                         out_dir=str(tmp_path / "w2")))
        assert res_1.manifest["outputs_hash"] == res_2.manifest["outputs_hash"]

    def test_seed_changes_the_run_directory(self, tmp_path):
        config_a = load_config(_write_config(tmp_path, "a.yaml", seed=1))
        config_b = load_config(_write_config(tmp_path, "b.yaml", seed=2))
        assert config_a.run_dir() != config_b.run_dir()

    def test_fusion_only_mean_equals_smoothed_base(self, tmp_path):
        rng = np.random.default_rng(3)
        n = 60
        base = FrameTrack("a", 5.0, rng.normal(size=(n, 8)), kind="class_scores")
        write_track_csv(tmp_path / "base.csv", [base])
        truth_rows = {"a": {t: np.array([float(rng.integers(0, 8))]) for t in range(n)}}
        write_label_csv(tmp_path / "labels.csv", truth_rows, task="expr")
        cfg = {
            "task": "expr",
            "paths": {"labels": str(tmp_path / "labels.csv"),
                      "base_predictions": [str(tmp_path / "base.csv")]},
            "kelm": {"enabled": False},
            "fusion": {"method": "mean"},
            "output": {"dir": str(tmp_path / "runs")},
        }
        path = tmp_path / "fuse.yaml"
        path.write_text(yaml.safe_dump(cfg))
        result = run_pipeline(load_config(path))
        expected = hamming_smooth(base, SmoothingSpec(0.5)).values.argmax(axis=1)
        got = np.loadtxt(result.run_dir / "predictions.csv", delimiter=",",
                         skiprows=1, usecols=2, dtype=np.int64)
        np.testing.assert_array_equal(got, expected)

    def test_va_run_round_trips(self, tmp_path):
        path = _write_config(
            tmp_path,
            task="va",
            window={"window_seconds": 4.0, "hop_seconds": 2.0},
            synth={"n_videos": 3, "frames_per_video": 200, "embedding_dim": 6,
                   "noise": 0.05},
            split={"dev_videos": ["v002"]},
        )
        config = load_config(path)
        _synth_from(config)
        result = run_pipeline(config)
        assert -1.0 <= result.report.ccc_mean <= 1.0
        pred = (result.run_dir / "predictions.csv").read_text().splitlines()
        assert pred[0] == "video_id,frame,valence,arousal"
        assert len(pred) == 1 + 200  # the evaluated (dev) video only

    def test_dwf_and_rf_methods_run(self, tmp_path):
        base_path = _write_config(tmp_path, synth={"noise": 0.5})
        config = load_config(base_path)
        _synth_from(config)
        for method, extra in (("dwf", {"pool_size": 200}), ("rf", {"tree_grid": [5, 10]})):
            path = _write_config(
                tmp_path, f"{method}.yaml",
                fusion={"method": method, **extra},
                synth={"noise": 0.5},
                output={"dir": str(tmp_path / f"runs_{method}")},
            )
            result = run_pipeline(load_config(path))
            assert 0.0 <= result.report.macro_f1 <= 1.0
            if method == "dwf":
                assert (result.run_dir / "pool_scores.csv").exists()
            else:
                assert (result.run_dir / "rf_info.csv").exists()


class TestCli:
    def _prepare(self, tmp_path, **overrides):
        path = _write_config(tmp_path, **overrides)
        assert main(["synth", "--config", str(path)]) == 0
        return path

    def test_staged_commands_reproduce_the_single_shot_run(self, tmp_path):
        path = self._prepare(tmp_path)
        assert main(["run", "--config", str(path),
                     "--out-dir", str(tmp_path / "single")]) == 0
        stage_cmds = ["window", "features", "train-kelm", "predict-kelm",
                      "fuse-mean", "postprocess", "evaluate"]
        for cmd in stage_cmds:
            assert main([cmd, "--config", str(path),
                         "--out-dir", str(tmp_path / "staged")]) == 0
        run_a = next((tmp_path / "single").iterdir())
        run_b = next((tmp_path / "staged").iterdir())
        assert run_a.name == run_b.name
        for rel in ("windows.csv", "features.csv", "kelm_model.txt",
                    "models/kelm.csv", "fused.csv", "predictions.csv", "report.csv"):
            assert (run_a / rel).read_bytes() == (run_b / rel).read_bytes()

    def test_exit_codes_by_error_family(self, tmp_path):
        # 3: missing config file
        assert main(["run", "--config", str(tmp_path / "none.yaml")]) == 3
        # 2: config error
        bad = tmp_path / "bad.yaml"
        bad.write_text("task: banana\n")
        assert main(["run", "--config", str(bad)]) == 2
        # 3: config loads but the data files are absent
        path = _write_config(tmp_path)
        assert main(["run", "--config", str(path)]) == 3
        # 5: labels hold the other task's annotations
        config = load_config(path)
        _synth_from(config)
        rng = np.random.default_rng(0)
        va_rows = {"v000": {t: np.clip(rng.normal(size=2), -1, 1) for t in range(10)}}
        write_label_csv(config.labels, va_rows, task="va")
        assert main(["run", "--config", str(path)]) == 5
        # 4: labels name a video the embeddings lack
        expr_rows = {"zzz": {t: np.array([0.0]) for t in range(10)}}
        write_label_csv(config.labels, expr_rows, task="expr")
        assert main(["run", "--config", str(path)]) == 4
        # 6: corrupt embeddings file
        _synth_from(config)
        emb = config.embeddings
        with open(emb, "w") as fh:
            fh.write("not,a,track\n1,2,3\n")
        assert main(["run", "--config", str(path)]) == 6

    def test_successful_run_exits_zero(self, tmp_path, capsys):
        path = self._prepare(tmp_path)
        assert main(["run", "--config", str(path)]) == 0
        out = capsys.readouterr().out
        assert "macro_f1" in out and "run directory:" in out

    def test_seed_flag_changes_the_run_directory(self, tmp_path, capsys):
        path = self._prepare(tmp_path)
        assert main(["run", "--config", str(path)]) == 0
        first = capsys.readouterr().out
        assert main(["run", "--config", str(path), "--seed", "99"]) == 0
        second = capsys.readouterr().out
        assert first.splitlines()[-1] != second.splitlines()[-1]

    def test_console_script_help(self):
        proc = subprocess.run(["affectpipe", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        for cmd in ("synth", "train-kelm", "fuse-dwf", "postprocess", "run"):
            assert cmd in proc.stdout
