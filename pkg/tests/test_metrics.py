import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdgparse.labels import LabelMap
from cdgparse.metrics import ConfusionAccumulator, evaluate, report_from_confusion


def oracle_confusion(pred, gt, n):
    conf = np.zeros((n, n), dtype=np.int64)
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            conf[gt[i, j], pred[i, j]] += 1
    return conf


def oracle_scores(conf):
    """Straightforward reimplementation of the score formulas."""
    tp = np.diag(conf)
    gt_count, pred_count = conf.sum(1), conf.sum(0)
    pixel_acc = tp.sum() / conf.sum()
    present = (gt_count + pred_count) > 0
    iou = tp[present] / (gt_count + pred_count - tp)[present]
    return pixel_acc, iou.mean()


def test_perfect_prediction():
    gt = LabelMap(np.array([[0, 1], [2, 1]]), 3)
    r = evaluate(gt, gt)
    assert r.pixel_acc == 1.0 and r.mean_acc == 1.0 and r.mean_iou == 1.0


def test_derived_fixture():
    pred = np.array([[0, 1], [1, 1]])
    gt = np.array([[0, 1], [0, 1]])
    r = evaluate(pred, gt, num_classes=2)
    assert r.pixel_acc == pytest.approx(0.75)
    assert r.per_class_iou[0] == pytest.approx(0.5)
    assert r.per_class_iou[1] == pytest.approx(2 / 3)
    assert abs(r.mean_iou - 7 / 12) <= 1e-12


def test_degenerate_all_background_prediction():
    pred = np.zeros((2, 2), dtype=int)
    gt = np.ones((2, 2), dtype=int)
    r = evaluate(pred, gt, num_classes=2)
    assert r.per_class_iou[0] == 0.0
    assert r.per_class_iou[1] == 0.0
    assert r.mean_iou == 0.0
    assert r.fg_acc == 0.0


def test_absent_class_excluded_from_mean():
    pred = np.array([[0, 1]])
    gt = np.array([[0, 1]])
    r = evaluate(pred, gt, num_classes=5)
    assert np.isnan(r.per_class_iou[2:]).all()
    assert r.mean_iou == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 16, size=2)
    n = int(rng.integers(2, 8))
    pred = rng.integers(0, n, size=(h, w))
    gt = rng.integers(0, n, size=(h, w))
    r = evaluate(pred, gt, num_classes=n)
    conf = oracle_confusion(pred, gt, n)
    assert np.array_equal(r.confusion, conf)
    pixel_acc, mean_iou = oracle_scores(conf)
    assert abs(r.pixel_acc - pixel_acc) <= 1e-12
    assert abs(r.mean_iou - mean_iou) <= 1e-12


def test_merge_is_order_independent():
    rng = np.random.default_rng(0)
    pairs = [(rng.integers(0, 4, size=(5, 5)), rng.integers(0, 4, size=(5, 5))) for _ in range(6)]
    whole = ConfusionAccumulator(4)
    for p, t in pairs:
        whole.update(p, t)
    left, right = ConfusionAccumulator(4), ConfusionAccumulator(4)
    for p, t in pairs[:2]:
        left.update(p, t)
    for p, t in pairs[2:]:
        right.update(p, t)
    right.merge(left)
    assert np.array_equal(right.confusion, whole.confusion)


def test_scores_within_unit_interval():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        pred = rng.integers(0, n, size=(6, 6))
        gt = rng.integers(0, n, size=(6, 6))
        r = evaluate(pred, gt, num_classes=n)
        for score in (r.pixel_acc, r.mean_acc, r.mean_iou, r.fg_acc, r.precision, r.recall, r.f1):
            assert 0.0 <= score <= 1.0
        finite = r.per_class_iou[~np.isnan(r.per_class_iou)]
        assert np.all((finite >= 0) & (finite <= 1))


def test_confusion_sum_equals_pixels():
    pred = np.random.default_rng(1).integers(0, 3, size=(7, 5))
    gt = np.random.default_rng(2).integers(0, 3, size=(7, 5))
    r = evaluate(pred, gt, num_classes=3)
    assert r.confusion.sum() == 35


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape"):
        evaluate(np.zeros((2, 2), dtype=int), np.zeros((3, 2), dtype=int), num_classes=2)


def test_report_from_confusion_direct():
    conf = np.array([[4, 1], [2, 3]])
    r = report_from_confusion(conf)
    assert r.pixel_acc == pytest.approx(0.7)
    assert r.mean_acc == pytest.approx((4 / 5 + 3 / 5) / 2)
