#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
VGCE - Evaluation Tests
Bias sweep metrics, feasibility masking, tau calibration and scoring
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vgce.core.exceptions import EvaluationError, ShapeError
from vgce.models.concepts import CompositionLabel, Split, World, output_space
from vgce.models.graph import build_graph
from vgce.numerics.autodiff import constant
from vgce.services import vgae
from vgce.services.evaluation import (
    BiasPoint,
    EvalReport,
    ScoreMatrix,
    apply_feasibility,
    bias_candidates,
    calibrate_tau,
    curve_auc,
    evaluate_gczsl,
    evaluate_model,
    feasibility_mask,
    feasibility_scores,
    harmonic_mean,
    predict_at_bias,
    predict_topk,
    score_images,
    score_split,
)
from vgce.services.trainer import init_params, train
from tests.conftest import make_tiny_config


def _labels_for(pairs, columns):
    return [pairs[c] for c in columns]


def _grid_pairs(n_states, n_objects):
    return [CompositionLabel(s, o) for s in range(n_states) for o in range(n_objects)]


def _naive_sweep(scores, seen_mask, true_cols):
    """Loop-by-loop rescan: every per-image gap as a bias, plus both endpoints."""
    n_images, n_pairs = scores.shape
    gaps = []
    for i in range(n_images):
        if seen_mask[true_cols[i]]:
            continue
        best_seen = best_unseen = -math.inf
        for j in range(n_pairs):
            if seen_mask[j]:
                best_seen = max(best_seen, float(scores[i, j]))
            else:
                best_unseen = max(best_unseen, float(scores[i, j]))
        gap = best_seen - best_unseen
        if gap not in gaps:
            gaps.append(gap)
    biases = [-math.inf] + sorted(gaps) + [math.inf]

    points = []
    for bias in biases:
        seen_hits = seen_total = unseen_hits = unseen_total = 0
        for i in range(n_images):
            best_col, best_val = None, None
            for j in range(n_pairs):
                if bias == -math.inf and not seen_mask[j]:
                    continue
                if bias == math.inf and seen_mask[j]:
                    continue
                value = scores[i, j] + (bias if not seen_mask[j] and math.isfinite(bias) else 0.0)
                if best_val is None or value > best_val:
                    best_col, best_val = j, value
            hit = best_col == true_cols[i]
            if seen_mask[true_cols[i]]:
                seen_total += 1
                seen_hits += hit
            else:
                unseen_total += 1
                unseen_hits += hit
        s = seen_hits / seen_total if seen_total else 0.0
        u = unseen_hits / unseen_total if unseen_total else 0.0
        points.append((s, u))

    ordered = sorted(points, key=lambda p: (p[0], -p[1]))
    auc = math.fsum((x2 - x1) * (y1 + y2) / 2.0 for (x1, y1), (x2, y2) in zip(ordered, ordered[1:]))
    best_hm = max(0.0 if s + u == 0 else 2 * s * u / (s + u) for s, u in points)
    return auc, best_hm, points


@pytest.mark.unit
class TestBiasSweep:
    """Seen/unseen accuracy curve, AUC and best harmonic mean"""

    def test_perfect_classifier(self):
        pairs = _grid_pairs(2, 3)
        seen_mask = np.array([True, False, True, False, True, False])
        true_cols = np.array([0, 1, 2, 3, 4, 5, 0, 3])
        scores = np.eye(6)[true_cols]
        report = evaluate_gczsl(ScoreMatrix(scores, pairs, seen_mask), _labels_for(pairs, true_cols))
        assert report.best_seen == 1.0
        assert report.best_unseen == 1.0
        assert report.best_hm == 1.0
        assert report.auc == 1.0
        assert report.state_acc == 1.0
        assert report.object_acc == 1.0

    def test_all_equal_scores_pick_lowest_column(self):
        pairs = _grid_pairs(2, 2)
        seen_mask = np.array([True, False, True, False])
        true_cols = np.array([0, 0, 2, 1, 3])
        report = evaluate_gczsl(ScoreMatrix(np.zeros((5, 4)), pairs, seen_mask), _labels_for(pairs, true_cols))
        assert report.best_seen == pytest.approx(2 / 3)
        assert report.best_unseen == pytest.approx(1 / 2)
        assert report.curve[0].bias == -math.inf
        assert report.curve[-1].bias == math.inf

    def test_three_point_curve(self):
        points = [(0.2, 0.8), (0.5, 0.5), (0.8, 0.2)]
        xs = np.linspace(0.2, 0.8, 600_001)
        ys = np.interp(xs, [p[0] for p in points], [p[1] for p in points])
        integrated = float(np.sum((ys[1:] + ys[:-1]) / 2.0 * np.diff(xs)))

        assert curve_auc(points) == pytest.approx(0.3, abs=1e-12)
        assert curve_auc(points) == pytest.approx(integrated, abs=1e-9)
        assert max(harmonic_mean(s, u) for s, u in points) == 0.5

    def test_harmonic_mean_of_zeros(self):
        assert harmonic_mean(0.0, 0.0) == 0.0
        assert harmonic_mean(1.0, 0.0) == 0.0

    def test_matches_naive_rescan(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            n_images = int(rng.integers(2, 51))
            n_pairs = int(rng.integers(2, 31))
            seen_mask = rng.random(n_pairs) < 0.5
            seen_mask[0], seen_mask[-1] = True, False
            pairs = [CompositionLabel(0, o) for o in range(n_pairs)]
            true_cols = rng.integers(0, n_pairs, size=n_images)
            scores = rng.standard_normal((n_images, n_pairs))

            report = evaluate_gczsl(ScoreMatrix(scores, pairs, seen_mask), _labels_for(pairs, true_cols), n_bias_points=10_000)
            auc, best_hm, points = _naive_sweep(scores, seen_mask, true_cols)
            assert report.auc == auc
            assert report.best_hm == best_hm
            assert [(p.seen_acc, p.unseen_acc) for p in report.curve] == points

    def test_gap_itself_is_a_candidate(self):
        pairs = [CompositionLabel(0, 0), CompositionLabel(0, 1)]
        seen_mask = np.array([False, True])
        scores = ScoreMatrix(np.array([[-0.5, 0.0], [-0.2, 0.0]]), pairs, seen_mask)
        report = evaluate_gczsl(scores, [pairs[1], pairs[0]])
        assert bias_candidates(scores, np.array([1, 0]), 50) == [-math.inf, 0.2, math.inf]
        assert [(p.seen_acc, p.unseen_acc) for p in report.curve] == [(1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        assert report.best_hm == 1.0
        assert report.best_hm_bias == 0.2

    def test_endpoints_carry_best_seen_and_unseen(self):
        rng = np.random.default_rng(5)
        pairs = [CompositionLabel(0, o) for o in range(8)]
        seen_mask = np.array([True, True, True, False, False, False, True, False])
        true_cols = rng.integers(0, 8, size=40)
        scores = ScoreMatrix(rng.standard_normal((40, 8)), pairs, seen_mask)
        report = evaluate_gczsl(scores, _labels_for(pairs, true_cols))
        assert report.best_seen == max(p.seen_acc for p in report.curve)
        assert report.best_unseen == max(p.unseen_acc for p in report.curve)

    def test_candidates_subsampled(self):
        rng = np.random.default_rng(9)
        pairs = [CompositionLabel(0, o) for o in range(6)]
        seen_mask = np.array([True, False, True, False, True, False])
        true_cols = np.array([1, 3, 5] * 30)
        scores = ScoreMatrix(rng.standard_normal((90, 6)), pairs, seen_mask)
        biases = bias_candidates(scores, true_cols, n_bias_points=7)
        assert len(biases) <= 9
        assert biases[0] == -math.inf and biases[-1] == math.inf
        assert biases[1:-1] == sorted(biases[1:-1])

    @given(st.integers(0, 10_000), st.floats(-3.0, 3.0), st.floats(0.0, 3.0))
    @settings(max_examples=40, deadline=None)
    def test_more_bias_more_unseen_predictions(self, seed, bias, step):
        rng = np.random.default_rng(seed)
        scores = rng.standard_normal((20, 6))
        seen_mask = np.array([True, False, True, False, False, True])
        low = predict_at_bias(scores, seen_mask, bias)
        high = predict_at_bias(scores, seen_mask, bias + step)
        assert np.all(~seen_mask[low] <= ~seen_mask[high])

    @given(st.integers(0, 10_000), st.sampled_from([-math.inf, 0.0, math.inf]))
    @settings(max_examples=40, deadline=None)
    def test_positive_row_scaling_keeps_prediction(self, seed, bias):
        rng = np.random.default_rng(seed)
        scores = rng.standard_normal((15, 7))
        seen_mask = np.array([True, False, True, True, False, False, True])
        factors = rng.uniform(0.1, 10.0, size=(15, 1))
        np.testing.assert_array_equal(
            predict_at_bias(scores * factors, seen_mask, bias), predict_at_bias(scores, seen_mask, bias)
        )

    def test_label_missing_from_columns(self):
        pairs = [CompositionLabel(0, 0), CompositionLabel(0, 1)]
        scores = ScoreMatrix(np.zeros((1, 2)), pairs, np.array([True, False]))
        with pytest.raises(EvaluationError):
            evaluate_gczsl(scores, [CompositionLabel(1, 1)])

    def test_label_count_mismatch(self):
        pairs = [CompositionLabel(0, 0), CompositionLabel(0, 1)]
        scores = ScoreMatrix(np.zeros((2, 2)), pairs, np.array([True, False]))
        with pytest.raises(EvaluationError):
            evaluate_gczsl(scores, [CompositionLabel(0, 0)])

    def test_score_matrix_shape(self):
        with pytest.raises(ShapeError):
            ScoreMatrix(np.zeros((2, 3)), [CompositionLabel(0, 0)], np.array([True]))

    def test_report_serialization(self):
        report = EvalReport(
            curve=[BiasPoint(-math.inf, 1.0, 0.0, 0.0), BiasPoint(0.5, 0.5, 0.5, 0.5), BiasPoint(math.inf, 0.0, 1.0, 0.0)],
            auc=0.5,
            best_hm=0.5,
            best_seen=1.0,
            best_unseen=1.0,
            state_acc=0.5,
            object_acc=0.5,
            best_hm_bias=0.5,
        )
        out = report.to_dict()
        assert out["curve"][0]["bias"] == "-inf"
        assert out["curve"][-1]["bias"] == "inf"
        assert list(report.curve_frame().columns) == ["bias", "seen_acc", "unseen_acc"]


@pytest.mark.unit
class TestFeasibility:
    """Edge-probability threshold mask"""

    def test_zero_means_give_one_half(self):
        probs = feasibility_scores(np.zeros((5, 4)), 2, 3)
        np.testing.assert_array_equal(probs, np.full((2, 3), 0.5))

    def test_delegates_to_edge_decoder(self):
        z = np.random.default_rng(0).standard_normal((7, 3))
        np.testing.assert_array_equal(feasibility_scores(z, 3, 4), vgae.decode_edges(constant(z), 3, 4).value)

    def test_zero_threshold_masks_nothing(self):
        rng = np.random.default_rng(1)
        pairs = _grid_pairs(3, 3)
        scores = ScoreMatrix(rng.standard_normal((4, 9)), pairs, np.arange(9) % 2 == 0)
        masked = apply_feasibility(scores, feasibility_mask(rng.random((3, 3)), 0.0))
        np.testing.assert_array_equal(masked.scores, scores.scores)

    def test_unit_threshold_keeps_certain_and_seen(self):
        probs = np.array([[1.0, 0.99], [0.3, 1.0]])
        seen = [CompositionLabel(1, 0)]
        mask = feasibility_mask(probs, 1.0, seen)
        np.testing.assert_array_equal(mask.xi, [[True, False], [True, True]])

        pairs = _grid_pairs(2, 2)
        scores = ScoreMatrix(np.ones((2, 4)), pairs, np.array([False, False, True, False]))
        masked = apply_feasibility(scores, mask)
        assert np.isneginf(masked.scores[:, 1]).all()
        assert np.isfinite(masked.scores[:, [0, 2, 3]]).all()

    @given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_feasible_set_shrinks_with_tau(self, seed, a, b):
        rng = np.random.default_rng(seed)
        probs = rng.random((4, 5))
        seen = [CompositionLabel(0, 0), CompositionLabel(3, 2)]
        lo, hi = sorted((a, b))
        low_mask = feasibility_mask(probs, lo, seen)
        high_mask = feasibility_mask(probs, hi, seen)
        assert low_mask.n_feasible >= high_mask.n_feasible
        assert np.all(high_mask.xi <= low_mask.xi)
        assert high_mask.xi[0, 0] and high_mask.xi[3, 2]

    def test_tau_out_of_range(self):
        with pytest.raises(EvaluationError):
            feasibility_mask(np.zeros((2, 2)), 1.5)
        with pytest.raises(EvaluationError):
            feasibility_mask(np.zeros((2, 2)), -0.1)


@pytest.mark.unit
class TestTauCalibration:
    """Grid search over validation best HM"""

    @staticmethod
    def _distractor_case():
        # (0,1) outscores the true unseen pair (1,1) unless it is masked out
        pairs = [CompositionLabel(0, 1), CompositionLabel(1, 1), CompositionLabel(0, 0)]
        seen_mask = np.array([False, False, True])
        scores = ScoreMatrix(np.array([[-1.0, -1.0, 2.0], [5.0, 3.0, 0.0]]), pairs, seen_mask)
        labels = [CompositionLabel(0, 0), CompositionLabel(1, 1)]
        probs = np.array([[0.9, 0.3], [0.5, 0.9]])
        return scores, labels, probs

    def test_singleton_grid(self):
        scores, labels, probs = self._distractor_case()
        assert calibrate_tau(scores, labels, probs, [0.35], [CompositionLabel(0, 0)]).tau == 0.35

    def test_ties_prefer_smaller_tau(self):
        scores, labels, _ = self._distractor_case()
        result = calibrate_tau(scores, labels, np.ones((2, 2)), [0.5, 0.1, 0.3])
        assert result.tau == 0.1
        assert [t for t, _ in result.table] == [0.1, 0.3, 0.5]

    def test_masking_distractor_wins(self):
        scores, labels, probs = self._distractor_case()
        result = calibrate_tau(scores, labels, probs, [0.1, 0.2, 0.4, 0.6], [CompositionLabel(0, 0)])
        assert result.tau == 0.4
        assert dict(result.table) == {0.1: 0.0, 0.2: 0.0, 0.4: 1.0, 0.6: 1.0}

    def test_empty_validation(self):
        scores, _, probs = self._distractor_case()
        with pytest.raises(EvaluationError):
            calibrate_tau(scores, [], probs, [0.2])


@pytest.mark.unit
class TestPrediction:
    """Top-k listing and score matrix construction"""

    def test_topk_order_and_ties(self):
        pairs = _grid_pairs(1, 4)
        scores = ScoreMatrix(np.array([[0.1, 0.9, 0.9, -1.0]]), pairs, np.array([True, True, False, False]))
        top = predict_topk(scores, 3)[0]
        assert [p for p, _ in top] == [pairs[1], pairs[2], pairs[0]]
        assert top[0][1] == 0.9

    def test_topk_capped(self):
        pairs = _grid_pairs(1, 2)
        scores = ScoreMatrix(np.zeros((3, 2)), pairs, np.array([True, False]))
        assert all(len(row) == 2 for row in predict_topk(scores, 10))
        with pytest.raises(EvaluationError):
            predict_topk(scores, 0)

    def test_scores_independent_of_threads(self, tiny_dataset):
        config = make_tiny_config()
        params = init_params(tiny_dataset, config)
        graph = build_graph(tiny_dataset.vocab, tiny_dataset.splits, tiny_dataset.node_features)
        pairs = output_space(tiny_dataset.vocab, tiny_dataset.splits, World.OPEN)
        features = tiny_dataset.store.rows(tiny_dataset.splits.image_ids(Split.TEST))
        seen = tiny_dataset.splits.seen_mask(pairs)

        single = score_images(params, graph, features, pairs, seen, threads=1, block_rows=5)
        pooled = score_images(params, graph, features, pairs, seen, threads=4, block_rows=5)
        whole = score_images(params, graph, features, pairs, seen, threads=1, block_rows=10_000)
        np.testing.assert_array_equal(single.scores, pooled.scores)
        np.testing.assert_allclose(single.scores, whole.scores, rtol=1e-12, atol=1e-12)
        assert single.scores.shape == (len(features), len(pairs))


@pytest.mark.integration
class TestEvaluateModel:
    """Trained tiny model through the full evaluation path"""

    @pytest.fixture(scope="class")
    def tiny_model(self, tiny_dataset):
        return train(tiny_dataset, make_tiny_config(epochs=5)).params

    def test_closed_world_report(self, tiny_dataset, tiny_model):
        report = evaluate_model(tiny_dataset, tiny_model, make_tiny_config())
        assert 0.0 <= report.auc <= 1.0
        assert 0.0 <= report.best_hm <= 1.0
        assert report.tau_used is None
        assert report.feasible_pairs is None
        assert report.n_candidates == len(tiny_dataset.splits.seen_pairs | tiny_dataset.splits.unseen_pairs)

    def test_open_world_uses_fixed_tau(self, tiny_dataset, tiny_model):
        config = make_tiny_config().model_copy(update={"world": World.OPEN})
        report = evaluate_model(tiny_dataset, tiny_model, config)
        assert report.world == "open"
        assert report.tau_used == 0.2
        assert report.feasible_pairs >= len(tiny_dataset.splits.seen_pairs)
        assert report.n_candidates == 30

    def test_closed_world_calibrates_on_open_world_validation(self, tiny_dataset, tiny_model):
        config = make_tiny_config()
        config = config.model_copy(update={"eval": config.eval.model_copy(update={"calibrate": True})})
        splits = tiny_dataset.splits
        val = score_split(tiny_dataset, tiny_model, World.OPEN, Split.VAL)
        expected = calibrate_tau(
            val.scores, splits.labels(Split.VAL), val.edge_probs, config.eval.tau_grid, splits.seen_pairs
        )
        report = evaluate_model(tiny_dataset, tiny_model, config)
        assert report.world == "closed"
        assert report.tau_used == expected.tau
        assert report.n_candidates == len(splits.seen_pairs | splits.unseen_pairs)

    def test_calibrated_tau_in_grid(self, tiny_dataset, tiny_model):
        config = make_tiny_config().model_copy(update={"world": World.OPEN})
        config = config.model_copy(update={"eval": config.eval.model_copy(update={"calibrate": True})})
        report = evaluate_model(tiny_dataset, tiny_model, config)
        assert report.tau_used in config.eval.tau_grid
