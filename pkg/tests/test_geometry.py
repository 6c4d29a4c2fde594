import random

import numpy as np
import pytest

from ultraseg import BoundingBox, clip_box, expand_box, from_roi, iou, iou_matrix, to_roi

from oracles import iou_by_pixel_count


def test_box_validation():
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 5)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 5, -1)
    with pytest.raises(TypeError):
        BoundingBox(0.5, 0, 5, 5)
    b = BoundingBox(np.int64(1), np.int64(2), np.int64(3), np.int64(4))
    assert (b.x, b.y, b.w, b.h) == (1, 2, 3, 4)
    assert isinstance(b.x, int)


def test_box_dict_roundtrip():
    b = BoundingBox(3, 7, 20, 11)
    assert BoundingBox.from_dict(b.to_dict()) == b
    assert b.to_dict() == {"x": 3, "y": 7, "w": 20, "h": 11}


def test_iou_identity_and_disjoint():
    a = BoundingBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(50, 50, 5, 5)) == 0.0
    # boxes sharing only an edge do not intersect under closed-open semantics
    assert iou(a, BoundingBox(10, 0, 10, 10)) == 0.0


def test_iou_overlap_case():
    # frozen from the 30x30 rasterized pixel-count oracle: 25 / 175
    a = BoundingBox(0, 0, 10, 10)
    b = BoundingBox(5, 5, 10, 10)
    assert iou(a, b) == pytest.approx(25 / 175, abs=1e-12)
    assert iou(a, b) == iou(b, a)


def test_iou_matches_rasterized_oracle_exhaustive_small():
    # every box pair inside an 8x8 domain, checked against literal pixel counts
    boxes = [
        (x, y, w, h)
        for x in range(8)
        for w in range(1, 8 - x + 1)
        for y in range(8)
        for h in range(1, 8 - y + 1)
    ]
    sampled = boxes  # 1296 boxes; pair via random sample to keep runtime sane
    rng = random.Random(20)
    pairs = [(rng.choice(sampled), rng.choice(sampled)) for _ in range(4000)]
    for a, b in pairs:
        got = iou(BoundingBox(*a), BoundingBox(*b))
        want = iou_by_pixel_count(a, b, 8, 8)
        assert got == want


def test_iou_matrix_agrees_with_scalar():
    rng = random.Random(7)
    boxes = []
    for _ in range(60):
        x, y = rng.randrange(0, 50), rng.randrange(0, 50)
        w, h = rng.randrange(1, 30), rng.randrange(1, 30)
        boxes.append((x, y, w, h))
    mat = iou_matrix(np.array(boxes), np.array(boxes))
    for i in range(0, 60, 7):
        for j in range(0, 60, 5):
            assert mat[i, j] == iou(BoundingBox(*boxes[i]), BoundingBox(*boxes[j]))


def test_expand_box_centered():
    assert expand_box(BoundingBox(20, 20, 30, 30), 10, (100, 100)) == BoundingBox(15, 15, 40, 40)


def test_expand_box_clips_at_border():
    assert expand_box(BoundingBox(0, 0, 30, 30), 10, (100, 100)) == BoundingBox(0, 0, 35, 35)


def test_expand_box_zero_offset_is_identity():
    b = BoundingBox(20, 20, 30, 30)
    assert expand_box(b, 0, (100, 100)) == b


def test_expand_box_rejects_odd_offset():
    with pytest.raises(ValueError):
        expand_box(BoundingBox(5, 5, 10, 10), 3, (100, 100))


def test_expand_box_never_shrinks_and_stays_in_bounds():
    rng = random.Random(11)
    for _ in range(300):
        x, y = rng.randrange(0, 90), rng.randrange(0, 90)
        w, h = rng.randrange(1, 100 - x + 1), rng.randrange(1, 100 - y + 1)
        b = BoundingBox(x, y, w, h)
        offset = 2 * rng.randrange(0, 10)
        e = expand_box(b, offset, (100, 100))
        assert e.w >= b.w - 0 or e.x == 0 or e.x2 == 100  # clipping can only trim outside-image growth
        assert 0 <= e.x and e.x2 <= 100 and 0 <= e.y and e.y2 <= 100
        # the original box is inside the image, so expansion keeps covering it
        assert e.x <= b.x and e.y <= b.y and e.x2 >= b.x2 and e.y2 >= b.y2


def test_clip_box():
    assert clip_box(BoundingBox(-5, -5, 20, 20), (100, 100)) == BoundingBox(0, 0, 15, 15)
    b = BoundingBox(10, 10, 10, 10)
    assert clip_box(b, (100, 100)) == b
    with pytest.raises(ValueError):
        clip_box(BoundingBox(200, 200, 10, 10), (100, 100))


def test_roi_transforms():
    roi = BoundingBox(10, 20, 30, 30)
    assert to_roi((15, 25), roi) == (5, 5)
    assert to_roi((10, 20), roi) == (0, 0)
    rng = random.Random(3)
    for _ in range(100):
        p = (rng.randrange(0, 200), rng.randrange(0, 200))
        assert from_roi(to_roi(p, roi), roi) == p
