#!/usr/bin/env python3
"""
Tests for box arithmetic, NMS with provenance and box voting
"""

import itertools

import numpy as np
import pytest

from conftest import make_det
from errors import InvalidGeometryError, PreconditionError
from geometry import (BBox, bbox_voting, center_to_corners, corners_to_center, iou, iou_matrix,
                      nms)


def random_box(rng, size=100.0):
    x1, y1 = rng.uniform(0, size, 2)
    w, h = rng.uniform(0.5, size, 2)
    return BBox(float(x1), float(y1), float(x1 + w), float(y1 + h))


def test_iou_examples():
    b = BBox(3, 4, 17, 29)
    assert iou(b, b) == 1.0
    assert iou(BBox(0, 0, 10, 10), BBox(20, 20, 30, 30)) == 0.0
    assert iou(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)) == pytest.approx(1 / 3)


def test_iou_zero_area_boxes():
    assert iou(BBox(0, 0, 0, 0), BBox(0, 0, 0, 0)) == 0.0
    assert iou(BBox(5, 5, 5, 5), BBox(0, 0, 10, 10)) == 0.0


def test_malformed_box_rejected():
    with pytest.raises(InvalidGeometryError):
        BBox(10, 0, 0, 10)
    with pytest.raises(InvalidGeometryError):
        BBox(0, 10, 10, 0)
    with pytest.raises(InvalidGeometryError):
        BBox(0, 0, float('nan'), 1)


def test_iou_symmetric_and_bounded(rng):
    for _ in range(500):
        a, b = random_box(rng), random_box(rng)
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0


def test_iou_matrix_agrees_with_scalar(rng):
    boxes_a = [random_box(rng) for _ in range(7)]
    boxes_b = [random_box(rng) for _ in range(5)]
    m = iou_matrix(np.array([b.as_list() for b in boxes_a]), np.array([b.as_list() for b in boxes_b]))
    for i, j in itertools.product(range(7), range(5)):
        assert m[i, j] == pytest.approx(iou(boxes_a[i], boxes_b[j]))


def test_center_conversion():
    assert center_to_corners((5, 5, 10, 10)) == BBox(0, 0, 10, 10)
    assert center_to_corners((0, 0, 0, 0)) == BBox(0, 0, 0, 0)
    with pytest.raises(InvalidGeometryError):
        center_to_corners((0, 0, -1, 2))


def test_center_round_trip(rng):
    for _ in range(100):
        b = random_box(rng)
        back = center_to_corners(corners_to_center(b))
        assert back.as_list() == pytest.approx(b.as_list())


def test_nms_single_detection():
    d = make_det([0, 0, 10, 10], 0.7, uid='a')
    kept, suppression = nms([d], 0.5)
    assert [k.uid for k in kept] == ['a']
    assert kept[0].box == d.box
    assert suppression == {'a': []}


def test_nms_identical_boxes_keep_higher_score():
    low = make_det([0, 0, 10, 10], 0.8, uid='low', proposal='p-low')
    high = make_det([0, 0, 10, 10], 0.9, uid='high', proposal='p-high')
    kept, suppression = nms([low, high], 0.5)
    assert [k.uid for k in kept] == ['high']
    assert suppression == {'high': ['low']}
    assert kept[0].source_proposal_ids == {'p-low', 'p-high'}


def test_nms_disjoint_boxes_all_kept():
    a = make_det([0, 0, 10, 10], 0.5, uid='a')
    b = make_det([50, 50, 60, 60], 0.6, uid='b')
    kept, suppression = nms([a, b], 0.5)
    assert [k.uid for k in kept] == ['b', 'a']
    assert suppression == {'b': [], 'a': []}


def test_nms_equal_scores_prefer_lower_index():
    a = make_det([0, 0, 10, 10], 0.5, uid='first')
    b = make_det([1, 0, 11, 10], 0.5, uid='second')
    kept, _ = nms([a, b], 0.3)
    assert [k.uid for k in kept] == ['first']


def test_nms_rejects_mixed_frames_and_classes():
    a = make_det([0, 0, 10, 10], frame=0, uid='a')
    with pytest.raises(PreconditionError):
        nms([a, make_det([0, 0, 10, 10], frame=1, uid='b')], 0.5)
    with pytest.raises(PreconditionError):
        nms([a, make_det([0, 0, 10, 10], class_id=2, uid='c')], 0.5)


@pytest.mark.parametrize('thresh', [0.0, 0.3, 0.5, 0.7, 1.0])
def test_nms_partition_and_admissibility(rng, thresh):
    for trial in range(30):
        dets = [make_det(random_box(rng, 60), float(rng.uniform()), uid=f"d{trial}-{i}")
                for i in range(int(rng.integers(1, 12)))]
        kept, suppression = nms(dets, thresh)
        suppressed = [u for us in suppression.values() for u in us]
        assert len(kept) + len(suppressed) == len(dets)
        assert sorted([k.uid for k in kept] + suppressed) == sorted(d.uid for d in dets)
        for a, b in itertools.combinations(kept, 2):
            assert iou(a.box, b.box) <= thresh


def test_voting_without_suppressed_boxes_is_identity():
    d = make_det([1, 2, 3, 4], 0.6, uid='k')
    voted = bbox_voting([d], {'k': []}, [d], 0.5)
    assert voted[0].box == d.box


def test_voting_equal_weights():
    keeper = make_det([0, 0, 10, 10], 1.0, uid='k')
    other = make_det([0, 0, 12, 10], 1.0, uid='o')
    voted = bbox_voting([keeper], {'k': ['o']}, [keeper, other], 0.5)
    assert voted[0].box.as_list() == pytest.approx([0, 0, 11, 10])
    assert voted[0].score == 1.0


def test_voting_score_weighted():
    keeper = make_det([0, 0, 10, 10], 0.75, uid='k')
    other = make_det([0, 0, 14, 10], 0.25, uid='o')
    voted = bbox_voting([keeper], {'k': ['o']}, [keeper, other], 0.5)
    assert voted[0].box.x2 == pytest.approx(11.0)


def test_voting_ignores_boxes_below_threshold():
    keeper = make_det([0, 0, 10, 10], 0.9, uid='k')
    far = make_det([6, 0, 16, 10], 0.8, uid='f')
    voted = bbox_voting([keeper], {'k': ['f']}, [keeper, far], 0.5)
    assert voted[0].box == keeper.box


def test_voting_keeps_provenance_and_scores():
    a = make_det([0, 0, 10, 10], 0.9, uid='a', proposal='pa')
    b = make_det([0, 0, 11, 10], 0.7, uid='b', proposal='pb')
    kept, suppression = nms([a, b], 0.5)
    voted = bbox_voting(kept, suppression, [a, b], 0.5)
    assert voted[0].source_proposal_ids == {'pa', 'pb'}
    assert voted[0].score == 0.9


def test_voting_rejects_unknown_suppressed_id():
    keeper = make_det([0, 0, 10, 10], 0.9, uid='k')
    with pytest.raises(PreconditionError):
        bbox_voting([keeper], {'k': ['ghost']}, [keeper], 0.5)
