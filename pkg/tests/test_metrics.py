import random

import numpy as np
import pytest

from ultraseg import (
    BinaryMask,
    BoundingBox,
    Detection,
    ProbMask,
    average_precision,
    dice_coefficient,
    dice_loss,
    match_detections,
    mean_average_precision,
    pixel_rmse,
)

from oracles import ap_threshold_enumeration


def _pm(values):
    return ProbMask(np.array(values, dtype=np.float64))


def _bm(values):
    return BinaryMask(np.array(values, dtype=np.uint8))


# --- dice loss ---------------------------------------------------------------


def test_dice_loss_perfect_binary_match():
    p = _pm([[1.0, 1.0], [1.0, 1.0]])
    g = _bm([[1, 1], [1, 1]])
    assert dice_loss(p, g) == pytest.approx(-0.5, abs=1e-6)


def test_dice_loss_disjoint():
    assert dice_loss(_pm([[1.0, 0.0]]), _bm([[0, 1]])) == pytest.approx(0.0, abs=1e-9)


def test_dice_loss_half_probability_case():
    # frozen scalar evaluation: -(0.5) / (0.25 + 0.25 + 1) = -1/3
    assert dice_loss(_pm([[0.5, 0.5]]), _bm([[1, 0]])) == pytest.approx(-1 / 3, abs=1e-6)


def test_dice_loss_both_empty_is_zero():
    assert dice_loss(ProbMask.zeros(4, 4), BinaryMask.zeros(4, 4)) == 0.0


def test_dice_loss_shape_mismatch():
    with pytest.raises(ValueError):
        dice_loss(ProbMask.zeros(3, 3), BinaryMask.zeros(4, 4))


def test_dice_loss_epsilon_perturbation_is_negligible():
    # the denominator smoothing must not visibly move results on real masks
    rng = np.random.default_rng(44)
    for _ in range(30):
        p = rng.random((10, 10))
        g = (rng.random((10, 10)) < 0.5).astype(np.uint8)
        if g.sum() == 0:
            g[0, 0] = 1
        exact = -float(p.ravel() @ g.ravel()) / (float(p.ravel() @ p.ravel()) + float(g.sum()))
        got = dice_loss(ProbMask(p), BinaryMask(g))
        if exact != 0.0:
            assert abs(got - exact) / abs(exact) < 1e-5


def test_dice_loss_symmetric_for_binary_and_links_to_coefficient():
    rng = np.random.default_rng(21)
    for _ in range(50):
        a = (rng.random((9, 9)) < 0.4).astype(np.uint8)
        b = (rng.random((9, 9)) < 0.4).astype(np.uint8)
        loss_ab = dice_loss(ProbMask(a.astype(float)), BinaryMask(b))
        loss_ba = dice_loss(ProbMask(b.astype(float)), BinaryMask(a))
        assert loss_ab == pytest.approx(loss_ba, abs=1e-12)
        coeff = dice_coefficient(BinaryMask(a), BinaryMask(b))
        assert coeff + 2 * loss_ab == pytest.approx(0.0, abs=1e-5)


# --- dice coefficient -----------------------------------------------------------


def test_dice_coefficient_cases():
    a = _bm([[1, 1], [0, 0]])
    assert dice_coefficient(a, a) == 1.0
    assert dice_coefficient(a, _bm([[0, 0], [1, 1]])) == 0.0
    # |a|=4, |b|=4, |a&b|=2 -> 0.5 (pixel-count oracle)
    x = _bm([[1, 1, 1, 1, 0, 0]])
    y = _bm([[0, 0, 1, 1, 1, 1]])
    assert dice_coefficient(x, y) == 0.5
    assert dice_coefficient(BinaryMask.zeros(3, 3), BinaryMask.zeros(3, 3)) == 1.0


# --- rmse -------------------------------------------------------------------------


def test_pixel_rmse_cases():
    g = _bm([[1, 0], [0, 1]])
    assert pixel_rmse(ProbMask(g.pixels.astype(float)), g) == 0.0
    assert pixel_rmse(_pm([[1.0, 1.0]]), _bm([[0, 0]])) == 1.0
    assert pixel_rmse(_pm([[0.5, 0.5], [0.5, 0.5]]), _bm([[1, 0], [0, 1]])) == 0.5


def test_pixel_rmse_permutation_invariant():
    rng = np.random.default_rng(4)
    p = rng.random(24)
    g = (rng.random(24) < 0.5).astype(np.uint8)
    perm = rng.permutation(24)
    a = pixel_rmse(ProbMask(p.reshape(4, 6)), BinaryMask(g.reshape(4, 6)))
    b = pixel_rmse(ProbMask(p[perm].reshape(4, 6)), BinaryMask(g[perm].reshape(4, 6)))
    assert a == pytest.approx(b, abs=1e-12)


# --- detection matching --------------------------------------------------------------


def _det(x, y, w, h, label="benign", score=0.9):
    return Detection(box=BoundingBox(x, y, w, h), label=label, score=score)


def test_match_exact_hit():
    gts = [(BoundingBox(10, 10, 20, 20), "benign")]
    assert match_detections([_det(10, 10, 20, 20)], gts) == [True]


def test_match_duplicate_is_fp():
    gts = [(BoundingBox(10, 10, 20, 20), "benign")]
    preds = [_det(10, 10, 20, 20, score=0.9), _det(10, 10, 20, 20, score=0.8)]
    assert match_detections(preds, gts) == [True, False]
    # and in reversed input order the higher score still wins
    assert match_detections(list(reversed(preds)), gts) == [False, True]


def test_match_below_threshold_is_fp():
    gts = [(BoundingBox(0, 0, 10, 10), "benign")]
    pred = _det(0, 6, 10, 10)  # IoU = 4/16 ≈ 0.25
    assert match_detections([pred], gts, iou_thresh=0.5) == [False]


def test_match_is_class_aware():
    gts = [(BoundingBox(0, 0, 10, 10), "malignant")]
    assert match_detections([_det(0, 0, 10, 10, label="benign")], gts) == [False]


# --- average precision -----------------------------------------------------------------


def test_ap_perfect_single():
    assert average_precision([True], [0.9], 1) == 1.0


def test_ap_frozen_examples():
    # frozen from the threshold-enumeration oracle
    assert average_precision([True, False], [0.9, 0.8], 1) == 1.0
    assert average_precision([False, True], [0.9, 0.8], 1) == 0.5


def test_ap_no_gt():
    assert average_precision([False, False], [0.9, 0.8], 0) == 0.0
    assert average_precision([], [], 0) == 0.0


def test_ap_matches_enumeration_oracle_random():
    rng = random.Random(99)
    for _ in range(300):
        n = rng.randrange(0, 11)
        n_gt = rng.randrange(0, 6)
        flags = [rng.random() < 0.5 for _ in range(n)]
        n_tp = sum(flags)
        if n_tp > n_gt:  # cannot have more true positives than ground truths
            flags = [i < n_gt for i in range(n)]
            rng.shuffle(flags)
        # mix continuous and tied scores
        scores = [round(rng.random(), rng.choice((1, 6))) for _ in range(n)]
        got = average_precision(flags, scores, n_gt)
        want = ap_threshold_enumeration(flags, scores, n_gt)
        assert got == pytest.approx(want, abs=1e-12)


def test_mean_average_precision():
    per_class = {
        "benign": ([True], [0.9], 1),
        "malignant": ([False, True], [0.9, 0.8], 1),
        "empty": ([], [], 0),  # excluded: no ground truth
    }
    assert mean_average_precision(per_class) == pytest.approx(0.75)
    assert mean_average_precision({}) == 0.0
