"""Tests for segmentation, normal and edge metrics."""

import numpy as np
import pytest
from sklearn.metrics import confusion_matrix as sk_confusion

from src.errors import ContractError, ShapeError
from src.inference.metrics import (
    EdgeCounts,
    angular_errors,
    confusion_matrix,
    default_thresholds,
    edge_fmeasure,
    miou_and_accuracy,
    normal_stats,
)


class TestSegmentation:
    def test_perfect_prediction(self):
        gt = np.array([[0, 1], [2, 3]])
        scores = miou_and_accuracy(gt, gt, 4)
        assert scores.mean_iou == 1.0
        assert scores.mean_accuracy == 1.0

    def test_hand_counted_binary_case(self):
        gt = np.array([[0, 0], [1, 1]])
        pred = np.array([[0, 1], [1, 1]])
        scores = miou_and_accuracy(pred, gt, 2)
        np.testing.assert_allclose(scores.per_class_iou, [1 / 2, 2 / 3])
        assert scores.mean_iou == pytest.approx(7 / 12)
        assert scores.mean_accuracy == pytest.approx(0.75)

    def test_ignored_pixels_do_not_count(self):
        gt = np.array([[0, 255], [1, 1]])
        pred = np.array([[0, 1], [1, 1]])
        assert miou_and_accuracy(pred, gt, 2).mean_iou == 1.0

    def test_absent_class_is_excluded(self):
        gt = np.array([0, 0, 1, 1])
        scores = miou_and_accuracy(gt, gt, 3)
        assert np.isnan(scores.per_class_iou[2])
        assert scores.mean_iou == 1.0

    @pytest.mark.parametrize("seed", range(25))
    def test_confusion_matches_sklearn(self, seed):
        rng = np.random.default_rng(seed)
        gt = rng.integers(0, 5, 400)
        pred = rng.integers(0, 5, 400)
        gt[::7] = 255
        keep = gt != 255
        expected = sk_confusion(gt[keep], pred[keep], labels=list(range(5)))
        np.testing.assert_array_equal(confusion_matrix(pred, gt, 5), expected)

    @pytest.mark.parametrize("seed", range(25))
    def test_relabeling_both_maps_keeps_mean_iou(self, seed):
        rng = np.random.default_rng(seed)
        gt = rng.integers(0, 5, (12, 12))
        pred = np.where(rng.random((12, 12)) < 0.6, gt, rng.integers(0, 5, (12, 12)))
        perm = rng.permutation(5)
        before = miou_and_accuracy(pred, gt, 5)
        after = miou_and_accuracy(perm[pred], perm[gt], 5)
        assert after.mean_iou == pytest.approx(before.mean_iou, rel=1e-12)
        assert after.mean_accuracy == pytest.approx(before.mean_accuracy, rel=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ContractError):
            confusion_matrix(np.array([4]), np.array([0]), 4)

    def test_nothing_to_score(self):
        with pytest.raises(ContractError):
            miou_and_accuracy(np.array([0]), np.array([255]), 2)


class TestNormals:
    def test_exact_prediction(self):
        gt = np.tile(np.array([0.0, 0.0, 1.0]), (10, 1))
        stats = normal_stats(gt, gt)
        assert (stats.mean, stats.median, stats.rmse) == (0.0, 0.0, 0.0)
        assert stats.pct_11_25 == stats.pct_22_5 == stats.pct_30 == 1.0

    def test_half_exact_half_orthogonal(self):
        gt = np.tile(np.array([0.0, 0.0, 1.0]), (4, 1))
        pred = gt.copy()
        pred[2:] = [1.0, 0.0, 0.0]
        stats = normal_stats(pred, gt)
        assert stats.median == 0.0
        assert stats.mean == pytest.approx(45.0)
        assert stats.pct_30 == 0.5

    def test_predictions_are_normalized_and_zero_scores_ninety(self):
        gt = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
        pred = np.array([[0.0, 0.0, 5.0], [0.0, 0.0, 0.0]])
        np.testing.assert_allclose(angular_errors(pred, gt), [0.0, 90.0])

    def test_channel_first_maps_and_mask(self):
        gt = np.zeros((3, 2, 2))
        gt[2] = 1.0
        pred = gt.copy()
        pred[:, 0, 0] = [1.0, 0.0, 0.0]
        mask = np.array([[False, True], [True, True]])
        assert normal_stats(pred, gt, mask).mean == 0.0

    def test_size_mismatch(self):
        with pytest.raises(ShapeError):
            angular_errors(np.zeros((2, 3)), np.zeros((3, 3)))


def brute_force_counts(prob, gt, thresholds):
    rows = []
    for t in thresholds:
        predicted = prob >= t
        rows.append(((predicted & gt).sum(), (predicted & ~gt).sum(), (~predicted & gt).sum()))
    return np.array(rows).T


class TestEdges:
    def test_perfect_map(self):
        gt = np.zeros((8, 8), dtype=int)
        gt[3, :] = 1
        report = edge_fmeasure(gt.astype(float), gt)
        assert report.best_f == 1.0
        assert 0.0 < report.best_threshold < 1.0

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_brute_force_counts(self, seed):
        rng = np.random.default_rng(seed)
        prob = rng.random((16, 16))
        gt = rng.random((16, 16)) < 0.1
        thresholds = default_thresholds(51)
        counts = EdgeCounts(thresholds).add(prob, gt)
        tp, fp, fn = brute_force_counts(prob, gt, thresholds)
        np.testing.assert_array_equal(counts.tp, tp)
        np.testing.assert_array_equal(counts.fp, fp)
        np.testing.assert_array_equal(counts.fn, fn)
        report = counts.report()
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        recall = tp / (tp + fn)
        np.testing.assert_allclose(report.precision, precision)
        np.testing.assert_allclose(report.recall, recall)

    @pytest.mark.parametrize("seed", range(25))
    def test_recall_never_rises_with_the_threshold(self, seed):
        rng = np.random.default_rng(seed)
        gt = rng.random((16, 16)) < rng.uniform(0.02, 0.3)
        gt[0, 0] = True
        prob = np.clip(0.4 * gt + rng.random((16, 16)) * 0.7, 0.0, 1.0)
        report = edge_fmeasure(prob, gt)
        assert (np.diff(report.recall) <= 0).all()
        assert report.recall[0] <= 1.0

    def test_no_positives(self):
        report = edge_fmeasure(np.full((4, 4), 0.3), np.zeros((4, 4)))
        assert report.best_f == 0.0
        assert report.no_positives

    def test_counts_are_additive(self):
        rng = np.random.default_rng(2)
        probs = [rng.random((8, 8)) for _ in range(2)]
        gts = [rng.random((8, 8)) < 0.2 for _ in range(2)]
        thresholds = default_thresholds(11)
        pooled = EdgeCounts(thresholds)
        for p, g in zip(probs, gts):
            pooled.add(p, g)
        joint = EdgeCounts(thresholds).add(np.concatenate(probs), np.concatenate(gts))
        np.testing.assert_array_equal(pooled.tp, joint.tp)
        np.testing.assert_array_equal(pooled.fp, joint.fp)

    def test_curve_frame(self):
        report = edge_fmeasure(np.full((2, 2), 0.5), np.eye(2), thresholds=[0.25, 0.75])
        assert list(report.curve().columns) == ["threshold", "precision", "recall", "f"]
        assert len(report.curve()) == 2

    def test_threshold_count(self):
        thresholds = default_thresholds()
        assert len(thresholds) == 99
        assert (thresholds[0], thresholds[-1]) == pytest.approx((0.01, 0.99))
        np.testing.assert_allclose(np.diff(thresholds), 0.01)
        assert default_thresholds(1) == pytest.approx([0.5])
        with pytest.raises(ContractError):
            default_thresholds(0)
