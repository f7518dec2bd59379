import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxfuse.fusion import FusionParams, LossParams, detection_loss, iou, weighted_boxes_fusion
from ctxfuse.types import DetectionSet


def ds(boxes, scores, labels=None):
    labels = [0] * len(boxes) if labels is None else labels
    return DetectionSet(boxes, scores, labels)


# --- hand-computed oracles (frozen) ---


def test_iou_identity_disjoint_and_shifted():
    assert iou([0, 0, 10, 10], [0, 0, 10, 10]) == 1.0
    assert iou([0, 0, 10, 10], [20, 20, 30, 30]) == 0.0
    assert iou([0, 0, 10, 10], [1, 1, 11, 11]) == pytest.approx(81 / 119, abs=1e-12)


def test_wbf_two_box_example():
    out = weighted_boxes_fusion([ds([[0, 0, 10, 10]], [0.8]), ds([[1, 1, 11, 11]], [0.4])], FusionParams(0.55))
    assert len(out) == 1
    np.testing.assert_allclose(out.boxes[0], [1 / 3, 1 / 3, 31 / 3, 31 / 3], rtol=0, atol=1e-9)
    assert out.scores[0] == pytest.approx(0.6, abs=1e-9)


def test_wbf_high_threshold_keeps_both():
    out = weighted_boxes_fusion([ds([[0, 0, 10, 10]], [0.8]), ds([[1, 1, 11, 11]], [0.4])], FusionParams(0.7))
    assert len(out) == 2
    assert list(out.scores) == [0.8, 0.4]


def test_wbf_singleton_unchanged():
    a = ds([[3.25, 4.5, 17.125, 20.0]], [0.37], [2])
    out = weighted_boxes_fusion([a])
    assert out.equals(a)


def test_wbf_empty():
    assert len(weighted_boxes_fusion([])) == 0
    assert len(weighted_boxes_fusion([DetectionSet(), DetectionSet()])) == 0


def test_wbf_classes_never_merge():
    out = weighted_boxes_fusion([ds([[0, 0, 10, 10]], [0.8], [0]), ds([[0, 0, 10, 10]], [0.4], [1])])
    assert len(out) == 2


def test_wbf_confidence_floor_and_weighted_mode():
    lists = [ds([[0, 0, 10, 10]], [0.8]), ds([[1, 1, 11, 11]], [0.4]), ds([[50, 50, 60, 60]], [0.3])]
    out = weighted_boxes_fusion(lists, FusionParams(0.55, 0.0, "weighted"))
    # 2 of 3 models vote for the first cluster; the lone box gets 1/3
    np.testing.assert_allclose(sorted(out.scores), sorted([0.6 * 2 / 3, 0.3 / 3]), atol=1e-12)
    out = weighted_boxes_fusion(lists, FusionParams(0.55, 0.35))
    assert list(out.scores) == [pytest.approx(0.6)]


def test_fusion_params_validation():
    with pytest.raises(ValueError):
        FusionParams(0.0)
    with pytest.raises(ValueError):
        FusionParams(0.5, 1.0)
    with pytest.raises(ValueError):
        FusionParams(0.5, 0.0, "max")


def test_loss_perfect_match_is_zero():
    gt = ds([[0, 0, 10, 10], [20, 20, 40, 30]], [1, 1], [0, 1])
    r = detection_loss(gt, gt)
    assert r.cls_loss == 0.0 and r.loc_loss == 0.0 and r.total == 0.0


def test_loss_all_misses():
    gt = ds([[0, 0, 10, 10], [20, 20, 40, 30], [50, 50, 60, 60]], [1, 1, 1])
    assert detection_loss(DetectionSet(), gt).total == 3 * 1.0


def test_loss_half_confidence_is_ln2():
    gt = ds([[0, 0, 10, 10]], [1])
    r = detection_loss(ds([[0, 0, 10, 10]], [0.5]), gt)
    assert r.cls_loss == pytest.approx(math.log(2), abs=1e-12)
    assert r.loc_loss == 0.0


def test_loss_false_positive_penalty():
    gt = ds([[0, 0, 10, 10]], [1])
    pred = ds([[0, 0, 10, 10], [100, 100, 110, 110]], [1.0, 0.4])
    assert detection_loss(pred, gt).cls_loss == pytest.approx(0.5 * 0.4, abs=1e-12)


def test_loss_wrong_class_does_not_match():
    gt = ds([[0, 0, 10, 10]], [1], [0])
    pred = ds([[0, 0, 10, 10]], [0.9], [1])
    r = detection_loss(pred, gt)
    assert r.cls_loss == pytest.approx(1.0 + 0.5 * 0.9, abs=1e-12)


def test_loss_localization_smooth_l1():
    gt = ds([[0, 0, 10, 10]], [1])
    pred = ds([[1, 0, 11, 10]], [1.0])  # dx = 0.1 of width on x1 and x2
    r = detection_loss(pred, gt)
    assert r.loc_loss == pytest.approx(2 * 0.5 * 0.1**2, abs=1e-12)


# --- properties ---

coord = st.floats(0, 200, allow_nan=False, width=32)


@st.composite
def det_set(draw, max_n=6, n_classes=2):
    n = draw(st.integers(0, max_n))
    boxes, scores, labels = [], [], []
    for _ in range(n):
        x, y = draw(coord), draw(coord)
        w, h = draw(st.floats(1, 60, width=32)), draw(st.floats(1, 60, width=32))
        boxes.append([x, y, x + w, y + h])
        scores.append(draw(st.floats(0.015625, 1.0, width=32)))
        labels.append(draw(st.integers(0, n_classes - 1)))
    return DetectionSet(boxes, scores, labels)


@settings(max_examples=200, deadline=None)
@given(st.lists(det_set(), max_size=4), st.randoms(use_true_random=False))
def test_wbf_permutation_invariance(lists, rnd):
    out = weighted_boxes_fusion(lists)
    shuffled = []
    for d in lists:
        idx = list(range(len(d)))
        rnd.shuffle(idx)
        shuffled.append(DetectionSet(d.boxes[idx], d.scores[idx], d.labels[idx]))
    rnd.shuffle(shuffled)
    assert weighted_boxes_fusion(shuffled).equals(out)


@settings(max_examples=200, deadline=None)
@given(det_set(), det_set())
def test_loss_nonnegative(pred, gt):
    r = detection_loss(pred, gt)
    assert r.cls_loss >= 0 and r.loc_loss >= 0
    assert r.total == r.cls_loss + r.loc_loss


@settings(max_examples=100, deadline=None)
@given(det_set())
def test_self_loss_with_unit_confidence_is_zero(gt):
    one = DetectionSet(gt.boxes, np.ones(len(gt)), gt.labels)
    # overlapping same-class boxes may steal each other's matches, so only
    # assert on sets whose same-class boxes are well separated
    from ctxfuse.fusion import iou_matrix

    m = iou_matrix(gt.boxes, gt.boxes)
    same = gt.labels[:, None] == gt.labels[None, :]
    np.fill_diagonal(m, 0)
    if np.any((m >= 0.5) & same):
        return
    assert detection_loss(one, one).total == 0.0


def test_loss_params_defaults():
    p = LossParams()
    assert (p.match_iou, p.miss_penalty, p.false_positive_factor) == (0.5, 1.0, 0.5)
