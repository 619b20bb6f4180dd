import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import ap_from_definition, box_iou_fraction
from vussynth.metrics import (Detection, GroundTruth, MetricError, average_precision, box_iou, iou,
                              mask_iou, match_detections, match_max_iou, mean_average_precision,
                              state_match_rate)

boxes = st.tuples(st.integers(0, 40), st.integers(0, 40), st.integers(1, 30), st.integers(1, 30))


def test_iou_examples():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (20, 20, 5, 5)) == 0.0
    assert box_iou_fraction((0, 0, 10, 10), (5, 5, 10, 10)) == Fraction(25, 175)
    assert iou((0, 0, 10, 10), (5, 5, 10, 10)) == 25 / 175
    with pytest.raises(MetricError):
        iou((0, 0, 1, 1), np.ones((2, 2), bool))
    with pytest.raises(MetricError):
        box_iou((0, 0, 0, 1), (0, 0, 1, 1))


@given(boxes, boxes)
def test_box_iou_properties(a, b):
    v = box_iou(a, b)
    assert v == box_iou(b, a) and 0 <= v <= 1 and box_iou(a, a) == 1
    assert v == float(box_iou_fraction(a, b))


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_mask_iou_properties(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 12, 12)) < rng.uniform(0.05, 0.9, (2, 1, 1))
    a[0, 0] = b[0, 0] = True
    v = mask_iou(a, b)
    assert v == mask_iou(b, a) and 0 <= v <= 1 and mask_iou(a, a) == 1
    assert v == (a & b).sum() / (a | b).sum()


def test_max_iou_examples():
    gts = [GroundTruth((0, 0, 10, 10)), GroundTruth((50, 50, 10, 10))]
    dets = [Detection(g.bbox) for g in gts]
    assert match_max_iou(gts, dets) == [1.0, 1.0]
    assert match_max_iou(gts, []) == [0.0, 0.0]
    g = GroundTruth((0, 0, 10, 10))
    d1, d2 = Detection((0, 0, 10, 3)), Detection((0, 0, 10, 6))
    assert match_max_iou([g], [d1, d2]) == [pytest.approx(0.6)]
    # non-exclusive: one detection serves two overlapping ground truths
    two = [GroundTruth((0, 0, 10, 10)), GroundTruth((0, 0, 10, 10))]
    assert match_max_iou(two, [Detection((0, 0, 10, 10))]) == [1.0, 1.0]


def derived_ap_scenario():
    gts = [GroundTruth((0, 0, 10, 10)), GroundTruth((100, 100, 10, 10))]
    dets = [Detection((0, 0, 10, 10), 0.9), Detection((50, 50, 10, 10), 0.8),
            Detection((100, 100, 10, 10), 0.7)]
    return gts, dets


def test_ap_examples():
    gts, dets = derived_ap_scenario()
    assert abs(average_precision(gts, dets) - 5 / 6) <= 1e-9
    ref = ap_from_definition([(None, g.bbox) for g in gts], [(None, d.bbox, d.confidence) for d in dets],
                             0.5)
    assert abs(ref - 5 / 6) <= 1e-12
    assert average_precision(gts, [Detection(g.bbox) for g in gts]) == 1.0
    assert average_precision(gts, [Detection((3, 3, 10, 10), 0.5)], 0.9) == 0.0
    assert average_precision([], [Detection((0, 0, 1, 1))]) == 0.0
    assert average_precision([], []) is None
    assert average_precision(gts, []) == 0.0


def test_greedy_matching_prefers_highest_iou():
    gts = [GroundTruth((0, 0, 10, 10)), GroundTruth((2, 0, 10, 10))]
    order, tp, pairs = match_detections(gts, [Detection((2, 0, 10, 10), 0.9)], 0.5)
    assert pairs == [(1, 0)] and tp == [True]


def test_matching_is_per_image():
    gts = [GroundTruth((0, 0, 10, 10), image="a")]
    assert average_precision(gts, [Detection((0, 0, 10, 10), image="b")]) == 0.0


def random_scenario(rng):
    n_img = int(rng.integers(1, 4))
    n_gt = int(rng.integers(0, 11))
    n_det = int(rng.integers(0, 21))
    gts = [(int(rng.integers(n_img)), tuple(int(x) for x in rng.integers(0, 30, 2)) +
            tuple(int(x) for x in rng.integers(3, 15, 2))) for _ in range(n_gt)]
    dets = []
    for _ in range(n_det):
        if gts and rng.random() < 0.7:
            img, (x, y, w, h) = gts[int(rng.integers(len(gts)))]
            box = (x + int(rng.integers(-3, 4)), y + int(rng.integers(-3, 4)),
                   max(1, w + int(rng.integers(-3, 4))), max(1, h + int(rng.integers(-3, 4))))
        else:
            img = int(rng.integers(n_img))
            box = tuple(int(x) for x in rng.integers(0, 30, 2)) + tuple(
                int(x) for x in rng.integers(3, 15, 2))
        # coarse confidences so ties occur
        dets.append((img, box, float(rng.integers(0, 6)) / 5))
    return gts, dets


def to_records(gts, dets):
    return ([GroundTruth(b, image=i) for i, b in gts],
            [Detection(b, confidence=c, image=i) for i, b, c in dets])


def test_ap_oracle_sample(rng):
    for _ in range(60):
        gts, dets = random_scenario(rng)
        thr = float(rng.choice([0.3, 0.5, 0.75]))
        got = average_precision(*to_records(gts, dets), thr)
        ref = ap_from_definition(gts, dets, thr)
        assert (got is None and ref is None) or abs(got - ref) <= 1e-9


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_ap_monotone_in_threshold(seed):
    rng = np.random.default_rng(seed)
    gts, dets = random_scenario(rng)
    if not gts:
        return
    g, d = to_records(gts, dets)
    aps = [average_precision(g, d, t) for t in np.linspace(0.05, 1.0, 20)]
    assert all(a >= b - 1e-12 for a, b in zip(aps, aps[1:]))


def test_map_over_categories():
    gts = [GroundTruth((0, 0, 10, 10), category="car"), GroundTruth((0, 0, 10, 10), category="van")]
    dets = [Detection((0, 0, 10, 10), category="car")]
    assert mean_average_precision(gts, dets) == 0.5
    assert mean_average_precision([], []) is None


def test_state_match_examples():
    v = (True, False) * 6
    assert state_match_rate([v], [v]) == 1.0
    w = list(v)
    for i in (0, 5, 11):
        w[i] = not w[i]
    assert state_match_rate([v], [tuple(w)]) == 0.75
    assert state_match_rate([v], [tuple(not b for b in v)]) == 0.0
    with pytest.raises(MetricError):
        state_match_rate([v], [])


def test_state_match_all_patterns():
    pats = list(itertools.product([False, True], repeat=12))
    assert state_match_rate(pats, pats) == 1.0
    assert state_match_rate(pats, [tuple(not b for b in p) for p in pats]) == 0.0


def test_record_validation():
    with pytest.raises(MetricError):
        Detection((0, 0, 1, 1), confidence=float("nan"))
    with pytest.raises(MetricError):
        GroundTruth((0, 0, 0, 1))
