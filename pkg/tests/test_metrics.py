import numpy as np
import pytest

from pretextseg.errors import DataError, ShapeError
from pretextseg.metrics import (
    ConfusionMatrix,
    category_matrix,
    confusion_from_categories,
    iou_per_class,
    miou,
    miou_oracle,
    pixel_accuracy,
    write_iou_report,
)


class TestCategoryMatrix:
    def test_diagonal_codes(self):
        got = category_matrix(np.array([0, 1]), np.array([0, 1]), 2)
        np.testing.assert_array_equal(got, [0, 3])

    def test_hand_computed(self):
        got = category_matrix(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]), 2)
        np.testing.assert_array_equal(got, [0, 1, 3, 3])

    def test_all_zero(self):
        got = category_matrix(np.zeros(5, dtype=int), np.zeros(5, dtype=int), 3)
        np.testing.assert_array_equal(got, np.zeros(5))

    def test_out_of_range_rejected_before_arithmetic(self):
        with pytest.raises(DataError, match="0..1"):
            category_matrix(np.array([0, 2]), np.array([0, 0]), 2)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            category_matrix(np.zeros(3, dtype=int), np.zeros(4, dtype=int), 2)


class TestConfusion:
    def test_bincount_by_hand(self):
        cm = confusion_from_categories(np.array([0, 1, 3, 3]), 2)
        np.testing.assert_array_equal(cm.counts, [[1, 1], [0, 2]])

    def test_empty_input(self):
        cm = confusion_from_categories(np.array([], dtype=int), 3)
        np.testing.assert_array_equal(cm.counts, np.zeros((3, 3)))

    def test_accumulation_additivity(self):
        rng = np.random.default_rng(0)
        gt = rng.integers(0, 4, 100)
        pred = rng.integers(0, 4, 100)
        whole = ConfusionMatrix.empty(4)
        whole.add(gt, pred)
        halves = ConfusionMatrix.empty(4)
        halves.add(gt[:50], pred[:50])
        halves.add(gt[50:], pred[50:])
        np.testing.assert_array_equal(whole.counts, halves.counts)

    def test_merge(self):
        a = ConfusionMatrix.empty(2)
        a.add(np.array([0, 1]), np.array([0, 1]))
        b = ConfusionMatrix.empty(2)
        b.add(np.array([1, 1]), np.array([0, 1]))
        a.merge(b)
        assert a.total == 4

    def test_code_out_of_range_is_internal_error(self):
        with pytest.raises(ValueError, match="internal"):
            confusion_from_categories(np.array([4]), 2)


class TestIoU:
    def test_perfect_prediction(self):
        cm = ConfusionMatrix(3, np.diag([5, 2, 7]).astype(np.int64))
        assert iou_per_class(cm) == [1.0, 1.0, 1.0]
        assert miou(cm) == 1.0

    def test_worked_example(self):
        cm = ConfusionMatrix(2, np.array([[1, 1], [0, 2]], dtype=np.int64))
        assert iou_per_class(cm) == [0.5, 2 / 3]
        assert abs(miou(cm) - 7 / 12) < 1e-15

    def test_absent_class_is_none_not_zero(self):
        cm = ConfusionMatrix(3, np.zeros((3, 3), dtype=np.int64))
        cm.counts[0, 0] = 4
        cm.counts[1, 1] = 2
        assert iou_per_class(cm)[2] is None
        assert miou(cm) == 1.0  # mean over the two present classes

    def test_include_absent_scores_zero(self):
        cm = ConfusionMatrix(2, np.array([[3, 0], [0, 0]], dtype=np.int64))
        assert miou(cm) == 1.0
        assert miou(cm, include_absent=True) == 0.5

    def test_all_absent_rejected(self):
        with pytest.raises(DataError, match="absent"):
            miou(ConfusionMatrix.empty(3))

    def test_pixel_accuracy(self):
        cm = ConfusionMatrix(2, np.array([[1, 1], [0, 2]], dtype=np.int64))
        assert pixel_accuracy(cm) == 0.75


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(20))
    def test_random_masks_match(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 9))
        gt = rng.integers(0, k, (64, 64))
        pred = np.where(rng.random((64, 64)) < 0.7, gt, rng.integers(0, k, (64, 64)))
        cm = ConfusionMatrix.empty(k)
        cm.add(gt, pred)
        assert abs(miou(cm) - miou_oracle(gt, pred, k)) <= 1e-12

    def test_absent_class_cases_match(self):
        rng = np.random.default_rng(99)
        # labels only from {0, 2} so class 1 (and 3) stay absent
        gt = rng.choice([0, 2], (16, 16))
        pred = rng.choice([0, 2], (16, 16))
        cm = ConfusionMatrix.empty(4)
        cm.add(gt, pred)
        assert abs(miou(cm) - miou_oracle(gt, pred, 4)) <= 1e-12

    def test_single_pixel(self):
        cm = ConfusionMatrix.empty(2)
        cm.add(np.array([[1]]), np.array([[0]]))
        assert miou(cm) == miou_oracle(np.array([[1]]), np.array([[0]]), 2)

    def test_identical_masks_give_one(self):
        rng = np.random.default_rng(5)
        gt = rng.integers(0, 3, (8, 8))
        cm = ConfusionMatrix.empty(3)
        cm.add(gt, gt)
        assert miou(cm) == 1.0
        assert miou_oracle(gt, gt, 3) == 1.0

    @pytest.mark.parametrize("seed", range(10))
    def test_label_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        k = 5
        gt = rng.integers(0, k, (32, 32))
        pred = rng.integers(0, k, (32, 32))
        base = miou_of(gt, pred, k)
        perm = rng.permutation(k)
        assert abs(miou_of(perm[gt], perm[pred], k) - base) <= 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_bounds_and_equality_condition(self, seed):
        rng = np.random.default_rng(100 + seed)
        gt = rng.integers(0, 4, (16, 16))
        pred = rng.integers(0, 4, (16, 16))
        score = miou_of(gt, pred, 4)
        assert 0.0 <= score <= 1.0
        if score == 1.0:
            np.testing.assert_array_equal(gt, pred)


def miou_of(gt, pred, k):
    cm = ConfusionMatrix.empty(k)
    cm.add(gt, pred)
    return miou(cm)


class TestReport:
    def test_csv_layout(self, tmp_path):
        cm = ConfusionMatrix(2, np.array([[1, 1], [0, 2]], dtype=np.int64))
        path = tmp_path / "iou.csv"
        write_iou_report(path, cm)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "class_id,intersection,union,iou"
        assert lines[1] == "0,1,2,0.5"
        assert lines[2].startswith("1,2,3,0.666666")
        assert lines[3].startswith("miou,,,0.58333")
        assert lines[4].startswith("pixel_accuracy,,,0.75")

    def test_absent_class_cell_empty(self, tmp_path):
        cm = ConfusionMatrix(2, np.array([[5, 0], [0, 0]], dtype=np.int64))
        path = tmp_path / "iou.csv"
        write_iou_report(path, cm)
        lines = path.read_text().strip().split("\n")
        assert lines[2] == "1,0,0,"
