import json
import math

import numpy as np
import pytest

from pyramnet.errors import DataError
from pyramnet.metrics import MetricReport, confusion_matrix, metrics, part_miou


class TestClassificationMetrics:
    def test_perfect(self, rng):
        labels = rng.integers(0, 4, 50)
        rep = metrics(labels, labels, "classification", 4)
        assert rep.overall_accuracy == rep.avg_class_accuracy == rep.miou == 1.0

    def test_all_class_zero_on_balanced_pair(self):
        labels = np.array([0, 0, 1, 1])
        rep = metrics(np.zeros(4, int), labels, "classification", 2)
        assert rep.overall_accuracy == 0.5 and rep.avg_class_accuracy == 0.5
        assert rep.iou == [0.5, 0.0]

    def test_imbalanced_majority_guess(self):
        labels = np.array([0] * 90 + [1] * 10)
        rep = metrics(np.zeros(100, int), labels, "classification", 2)
        assert rep.overall_accuracy == pytest.approx(0.9)
        assert rep.avg_class_accuracy == pytest.approx(0.5)

    def test_absent_class_is_nan_and_skipped(self):
        rep = metrics(np.array([0, 1]), np.array([0, 1]), "classification", 3)
        assert math.isnan(rep.recall[2]) and math.isnan(rep.iou[2])
        assert rep.avg_class_accuracy == 1.0

    def test_confusion_rows_are_labels(self):
        conf = confusion_matrix([1, 1, 0], [0, 1, 0], 2)
        np.testing.assert_array_equal(conf, [[1, 1], [0, 1]])

    def test_empty(self):
        with pytest.raises(DataError):
            metrics(np.array([], int), np.array([], int), "classification", 2)

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            metrics(np.zeros(3, int), np.zeros(4, int), "classification", 2)

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            metrics(np.zeros(3, int), np.array([0, 1, 2]), "classification", 2)


class TestSegmentationMetrics:
    def test_scene_miou_over_points(self):
        labels = np.array([[0, 0, 1, 1]])
        pred = np.array([[0, 1, 1, 1]])
        rep = metrics(pred, labels, "scene_seg", 2)
        # class 0: 1/2, class 1: 2/3
        assert rep.miou == pytest.approx((0.5 + 2 / 3) / 2)
        assert rep.overall_accuracy == 0.75

    def test_part_miou_absent_part_counts_as_one(self):
        pred = np.array([[0, 0, 0]])
        labels = np.array([[0, 0, 0]])
        assert part_miou(pred, labels, [0], [[0, 1]]) == 1.0

    def test_part_miou_per_shape_average(self):
        pred = np.array([[0, 1, 1, 1], [2, 2, 3, 3]])
        labels = np.array([[0, 0, 1, 1], [2, 2, 3, 3]])
        # shape 0: parts (1/2, 2/3); shape 1: perfect
        expected = ((0.5 + 2 / 3) / 2 + 1.0) / 2
        assert part_miou(pred, labels, [0, 1], [[0, 1], [2, 3]]) == pytest.approx(expected)

    def test_metrics_use_part_miou_with_categories(self):
        pred = np.array([[0, 0, 0]])
        rep = metrics(pred, pred, "part_seg", 4, categories=[0], category_parts=[[0, 1], [2, 3]])
        assert rep.miou == 1.0


class TestReport:
    def test_json_round_trip_keeps_nan(self):
        rep = metrics(np.array([0, 1]), np.array([0, 1]), "classification", 3, class_names=["a", "b", "c"])
        back = MetricReport.from_dict(json.loads(rep.to_json()))
        assert back.overall_accuracy == rep.overall_accuracy
        assert math.isnan(back.recall[2])

    def test_table_lists_every_class(self):
        rep = metrics(np.array([0, 1]), np.array([0, 1]), "classification", 3, class_names=["a", "b", "c"])
        text = rep.table()
        assert all(name in text for name in "abc")
        assert "overall accuracy" in text and "mIoU" in text
