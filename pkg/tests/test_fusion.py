"""Fusion pool sampling, weighted application, search, and RF stacking."""

from __future__ import annotations

import numpy as np
import pytest

from affectpipe import metrics
from affectpipe.errors import AlignmentError
from affectpipe.forest import ForestSpec
from affectpipe.fusion import (
    FusionMatrix,
    FusionPool,
    apply_fusion,
    dwf_search,
    fused_labels,
    mean_fusion,
    read_fusion_matrix,
    sample_pool,
    selector_matrix,
    stack_and_fuse_rf,
    uniform_matrix,
    write_fusion_matrix,
    write_score_table,
    _stack_features,
)
from affectpipe.timeline import FrameTrack


def _random_scores(rng, n_models, q, k):
    return [rng.dirichlet(np.ones(k), size=q) for _ in range(n_models)]


class TestFusionMatrix:
    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError):
            FusionMatrix(np.array([[1.5], [-0.5]]))

    def test_rejects_bad_column_sums(self):
        with pytest.raises(ValueError):
            FusionMatrix(np.array([[0.5], [0.4]]))

    def test_selector_is_one_hot(self):
        m = selector_matrix(1, 3, 2)
        np.testing.assert_array_equal(m.weights, [[0, 0], [1, 1], [0, 0]])


class TestSamplePool:
    def test_single_model_columns_are_exactly_one(self):
        pool = sample_pool(1, 4, pool_size=50, seed=3)
        for matrix in pool.matrices:
            np.testing.assert_array_equal(matrix.weights, np.ones((1, 4)))

    def test_columns_on_simplex(self):
        pool = sample_pool(5, 3, pool_size=200, alpha=0.5, seed=4)
        for matrix in pool.matrices:
            assert np.all(matrix.weights >= 0)
            np.testing.assert_allclose(matrix.weights.sum(axis=0), 1.0, atol=1e-9)

    def test_deterministic_and_seed_sensitive(self):
        a = sample_pool(3, 2, pool_size=20, seed=7)
        b = sample_pool(3, 2, pool_size=20, seed=7)
        c = sample_pool(3, 2, pool_size=20, seed=8)
        for ma, mb in zip(a.matrices, b.matrices):
            np.testing.assert_array_equal(ma.weights, mb.weights)
        assert any(
            not np.array_equal(ma.weights, mc.weights)
            for ma, mc in zip(a.matrices, c.matrices)
        )

    def test_selectors_appended_at_end(self):
        pool = sample_pool(3, 2, pool_size=10, seed=1)
        assert len(pool) == 13 and pool.includes_selectors
        for m in range(3):
            np.testing.assert_array_equal(
                pool.matrices[10 + m].weights, selector_matrix(m, 3, 2).weights
            )


class TestApplyFusion:
    def test_hand_worked_two_model_case(self):
        p1 = np.array([[0.6, 0.4]])
        p2 = np.array([[0.2, 0.8]])
        w = FusionMatrix(np.array([[0.5, 0.25], [0.5, 0.75]]))
        fused = apply_fusion([p1, p2], w, task="expr")
        np.testing.assert_allclose(fused, [[0.4, 0.7]], atol=1e-12)

    def test_identical_models_fuse_to_themselves(self):
        rng = np.random.default_rng(10)
        scores = rng.dirichlet(np.ones(4), size=30)
        pool = sample_pool(3, 4, pool_size=10, seed=11)
        for matrix in pool.matrices:
            fused = apply_fusion([scores] * 3, matrix, task="expr")
            np.testing.assert_allclose(fused, scores, atol=1e-9)

    def test_selector_copies_one_model_exactly(self):
        rng = np.random.default_rng(12)
        preds = _random_scores(rng, 3, 25, 8)
        fused = apply_fusion(preds, selector_matrix(2, 3, 8), task="expr")
        np.testing.assert_array_equal(fused, preds[2])

    def test_output_bounded_by_model_envelope(self):
        rng = np.random.default_rng(13)
        preds = _random_scores(rng, 4, 40, 5)
        stacked = np.stack(preds)
        pool = sample_pool(4, 5, pool_size=25, seed=14)
        for matrix in pool.matrices:
            fused = apply_fusion(preds, matrix, task="expr")
            assert np.all(fused <= stacked.max(axis=0) + 1e-12)
            assert np.all(fused >= stacked.min(axis=0) - 1e-12)

    def test_common_scaling_preserves_argmax(self):
        rng = np.random.default_rng(15)
        preds = _random_scores(rng, 3, 50, 6)
        matrix = sample_pool(3, 6, pool_size=1, seed=16).matrices[0]
        base = fused_labels(apply_fusion(preds, matrix, task="expr"))
        scaled = fused_labels(
            apply_fusion([7.5 * p for p in preds], matrix, task="expr")
        )
        np.testing.assert_array_equal(scaled, base)

    def test_va_outputs_clipped(self):
        p1 = np.array([[2.0, -3.0]])  # raw scores outside the va range
        fused = apply_fusion([p1], selector_matrix(0, 1, 2), task="va")
        np.testing.assert_array_equal(fused, [[1.0, -1.0]])

    def test_frame_tracks_round_trip_alignment(self):
        rng = np.random.default_rng(17)
        tracks = [
            FrameTrack("vid", 5.0, rng.dirichlet(np.ones(8), size=20),
                       kind="class_scores")
            for _ in range(2)
        ]
        fused = apply_fusion(tracks, uniform_matrix(2, 8))
        assert isinstance(fused, FrameTrack)
        assert fused.kind == "class_scores" and fused.video_id == "vid"

    def test_misaligned_tracks_name_the_video(self):
        rng = np.random.default_rng(18)
        a = FrameTrack("vidA", 5.0, rng.dirichlet(np.ones(3), size=10),
                       kind="class_scores")
        b = FrameTrack("vidB", 5.0, rng.dirichlet(np.ones(3), size=10),
                       kind="class_scores")
        with pytest.raises(AlignmentError, match="vidB"):
            apply_fusion([a, b], uniform_matrix(2, 3))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(AlignmentError):
            apply_fusion(
                [np.zeros((5, 3)), np.zeros((6, 3))], uniform_matrix(2, 3)
            )

    def test_matrix_shape_must_match_tracks(self):
        with pytest.raises(ValueError):
            apply_fusion([np.zeros((5, 3))], uniform_matrix(2, 3))


class TestMeanFusion:
    def test_single_model_identity(self):
        rng = np.random.default_rng(20)
        scores = rng.dirichlet(np.ones(4), size=15)
        np.testing.assert_array_equal(mean_fusion([scores], task="expr"), scores)

    def test_equals_uniform_matrix_fusion(self):
        rng = np.random.default_rng(21)
        preds = _random_scores(rng, 3, 20, 4)
        np.testing.assert_array_equal(
            mean_fusion(preds, task="expr"),
            apply_fusion(preds, uniform_matrix(3, 4), task="expr"),
        )

    def test_midpoint_of_two_constants(self):
        fused = mean_fusion([np.array([[0.0]]), np.array([[1.0]])], task="expr")
        np.testing.assert_array_equal(fused, [[0.5]])


class TestDwfSearch:
    def test_single_selector_pool_returns_solo_score(self):
        rng = np.random.default_rng(30)
        preds = _random_scores(rng, 1, 40, 4)
        truth = rng.integers(0, 4, size=40)
        pool = FusionPool(
            matrices=(selector_matrix(0, 1, 4),), alpha=1.0, seed=0,
            includes_selectors=True,
        )
        matrix, score, table = dwf_search(pool, preds, truth, "macro_f1")
        solo = metrics.classification_report(
            truth, preds[0].argmax(axis=1), n_classes=4
        ).macro_f1
        assert score == solo and len(table) == 1
        np.testing.assert_array_equal(matrix.weights, pool.matrices[0].weights)

    def test_with_selectors_beats_every_single_model(self):
        rng = np.random.default_rng(31)
        truth = rng.integers(0, 4, size=60)
        preds = []
        for _ in range(3):
            scores = rng.dirichlet(np.ones(4), size=60)
            agree = rng.random(60) < 0.6
            scores[agree, truth[agree]] += 1.0
            preds.append(scores / scores.sum(axis=1, keepdims=True))
        pool = sample_pool(3, 4, pool_size=300, seed=32)
        _, best, _ = dwf_search(pool, preds, truth, "macro_f1")
        for m in range(3):
            solo = metrics.classification_report(
                truth, preds[m].argmax(axis=1), n_classes=4
            ).macro_f1
            assert best >= solo

    def test_matches_brute_force_exhaustive_loop(self):
        rng = np.random.default_rng(33)
        truth = rng.integers(0, 3, size=15)
        preds = _random_scores(rng, 2, 15, 3)
        pool = sample_pool(2, 3, pool_size=50, seed=34)

        best_i, best_s = 0, -np.inf
        for i, matrix in enumerate(pool.matrices):
            fused = apply_fusion(preds, matrix, task="expr")
            s = metrics.classification_report(
                truth, fused.argmax(axis=1), n_classes=3
            ).macro_f1
            if s > best_s:
                best_i, best_s = i, s

        matrix, score, table = dwf_search(pool, preds, truth, "macro_f1")
        assert score == best_s
        np.testing.assert_array_equal(matrix.weights, pool.matrices[best_i].weights)
        assert table[best_i] == best_s

    def test_mean_ccc_metric_on_va_tracks(self):
        rng = np.random.default_rng(35)
        truth = np.clip(rng.normal(scale=0.4, size=(50, 2)), -1, 1)
        good = np.clip(truth + rng.normal(scale=0.05, size=(50, 2)), -1, 1)
        bad = np.clip(rng.normal(scale=0.4, size=(50, 2)), -1, 1)
        pool = sample_pool(2, 2, pool_size=100, seed=36)
        matrix, score, _ = dwf_search(pool, [good, bad], truth, "mean_ccc")
        solo_good = (
            metrics.ccc(truth[:, 0], good[:, 0]).ccc
            + metrics.ccc(truth[:, 1], good[:, 1]).ccc
        ) / 2
        assert score >= solo_good  # selector for the good model is in the pool

    def test_truth_length_mismatch_rejected(self):
        pool = sample_pool(1, 2, pool_size=1, seed=0)
        with pytest.raises(AlignmentError):
            dwf_search(pool, [np.zeros((5, 2))], np.zeros(4), "macro_f1")

    def test_unknown_metric_rejected(self):
        pool = sample_pool(1, 2, pool_size=1, seed=0)
        with pytest.raises(ValueError):
            dwf_search(pool, [np.zeros((5, 2))], np.zeros(5), "auc")


class TestRfStacking:
    def test_stacked_width_is_models_times_outputs(self):
        rng = np.random.default_rng(40)
        preds = _random_scores(rng, 3, 12, 8)
        assert _stack_features(preds).shape == (12, 24)

    def test_informative_single_model_fits_dev_perfectly(self):
        rng = np.random.default_rng(41)
        truth = rng.integers(0, 4, size=60)
        scores = rng.dirichlet(np.ones(4), size=60) * 0.2
        scores[np.arange(60), truth] += 0.8  # argmax always equals truth
        fused, info = stack_and_fuse_rf(
            [scores], truth, [scores], task="expr",
            base_spec=ForestSpec(n_trees=10, seed=42), grid=[10, 20],
        )
        assert info.dev_score == 1.0
        assert np.all(fused.argmax(axis=1) == truth)

    def test_constant_truth_gives_constant_output(self):
        rng = np.random.default_rng(43)
        preds = _random_scores(rng, 2, 30, 3)
        fused, _ = stack_and_fuse_rf(
            preds, np.zeros(30, dtype=int), preds, task="expr",
            base_spec=ForestSpec(n_trees=5, seed=44), grid=[5],
        )
        assert np.all(fused.argmax(axis=1) == 0)
        np.testing.assert_array_equal(fused, np.tile(fused[0], (30, 1)))

    def test_va_stacking_shapes_and_range(self):
        rng = np.random.default_rng(45)
        truth = np.clip(rng.normal(scale=0.3, size=(40, 2)), -1, 1)
        preds = [np.clip(truth + rng.normal(scale=0.1, size=(40, 2)), -1, 1)
                 for _ in range(2)]
        fused, info = stack_and_fuse_rf(
            preds, truth, preds, task="va",
            base_spec=ForestSpec(n_trees=5, seed=46), grid=[5, 10],
        )
        assert fused.shape == (40, 2)
        assert fused.min() >= -1.0 and fused.max() <= 1.0
        assert info.n_trees in (5, 10)

    def test_deterministic_across_calls(self):
        rng = np.random.default_rng(47)
        truth = rng.integers(0, 3, size=50)
        preds = _random_scores(rng, 2, 50, 3)
        kwargs = dict(task="expr", base_spec=ForestSpec(n_trees=5, seed=48),
                      grid=[5, 10])
        a, _ = stack_and_fuse_rf(preds, truth, preds, **kwargs)
        b, _ = stack_and_fuse_rf(preds, truth, preds, **kwargs)
        np.testing.assert_array_equal(a, b)


class TestPersistence:
    def test_matrix_csv_round_trip(self, tmp_path):
        pool = sample_pool(3, 2, pool_size=1, seed=50)
        path = tmp_path / "matrix.csv"
        write_fusion_matrix(path, pool.matrices[0],
                            model_names=["audio", "video", "text"],
                            output_names=["valence", "arousal"])
        matrix, models, outputs = read_fusion_matrix(path)
        np.testing.assert_array_equal(matrix.weights, pool.matrices[0].weights)
        assert models == ["audio", "video", "text"]
        assert outputs == ["valence", "arousal"]

    def test_score_table_format(self, tmp_path):
        path = tmp_path / "scores.csv"
        write_score_table(path, np.array([0.25, 0.5]))
        lines = path.read_text().splitlines()
        assert lines[0] == "pool_index,score"
        assert lines[1].startswith("0,") and lines[2].startswith("1,")
