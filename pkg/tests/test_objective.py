import math

import numpy as np
import pytest

from boxner.geometry import Box, encode_offsets
from boxner.matching import TruthBox, assign, sample_negatives
from boxner.objective import (HeadOutputs, confidence_loss, location_loss,
                              smooth_l1, smooth_l1_grad, total_loss)


def test_smooth_l1_values():
    assert smooth_l1(0.0) == 0.0
    assert smooth_l1(0.5) == 0.125
    assert smooth_l1(2.0) == 1.5
    assert smooth_l1(-2.0) == 1.5


def test_smooth_l1_continuity_at_seam():
    eps = 1e-10
    assert abs(smooth_l1(1.0 - eps) - smooth_l1(1.0 + eps)) < 1e-9
    assert abs(smooth_l1_grad(1.0 - eps) - smooth_l1_grad(1.0 + eps)) < 1e-9
    assert smooth_l1(1.0) == 0.5
    assert smooth_l1_grad(1.0) == 1.0


def test_smooth_l1_grad_bounded():
    for x in np.linspace(-10, 10, 401):
        assert abs(smooth_l1_grad(x)) <= 1.0
        # matches a finite difference away from the seam
        if abs(abs(x) - 1.0) > 1e-3:
            fd = (smooth_l1(x + 1e-6) - smooth_l1(x - 1e-6)) / 2e-6
            assert smooth_l1_grad(x) == pytest.approx(fd, abs=1e-5)


def _single_positive_setup():
    cand = Box(0.20, 0.08)
    truth = TruthBox(Box(0.22, 0.10), 1)
    a = assign([cand], [truth], 0.5)
    assert a.positive[0]
    return a, [truth], [cand]


def test_location_loss_zero_at_targets():
    a, truths, boxes = _single_positive_setup()
    target = encode_offsets(boxes[0], truths[0].box)
    heads = HeadOutputs(np.array([[0.1, 0.9]]), np.array([[target.ds, target.dl]]))
    assert location_loss(a, heads, truths, boxes) == 0.0


def test_location_loss_hand_value():
    a, truths, boxes = _single_positive_setup()
    heads = HeadOutputs(np.array([[0.1, 0.9]]), np.zeros((1, 2)))
    # targets are (0.2, ln 1.25); both land on the quadratic branch
    expect = 0.5 * 0.2 ** 2 + 0.5 * math.log(1.25) ** 2
    assert location_loss(a, heads, truths, boxes) == pytest.approx(expect, abs=1e-9)
    assert expect == pytest.approx(0.044898, abs=5e-6)


def test_location_loss_neighbourhood_normalization():
    # two neighbours with identical errors weigh the same as one
    truth = TruthBox(Box(0.2, 0.1), 1)
    one = assign([Box(0.2, 0.1)], [truth], 0.5)
    two = assign([Box(0.2, 0.1), Box(0.2, 0.1)], [truth], 0.5)
    h1 = HeadOutputs(np.ones((1, 2)) * 0.5, np.zeros((1, 2)))
    h2 = HeadOutputs(np.ones((2, 2)) * 0.5, np.zeros((2, 2)))
    assert location_loss(one, h1, [truth], [Box(0.2, 0.1)]) == pytest.approx(
        location_loss(two, h2, [truth], [Box(0.2, 0.1)] * 2), abs=1e-12)


def test_location_loss_permutation_invariant():
    truth = TruthBox(Box(0.2, 0.2), 1)
    boxes = [Box(0.2, 0.15), Box(0.22, 0.18), Box(0.5, 0.05)]
    a = assign(boxes, [truth], 0.5)
    offs = np.array([[0.1, -0.2], [0.3, 0.0], [0.0, 0.0]])
    base = location_loss(a, HeadOutputs(np.zeros((3, 2)), offs), [truth], boxes)
    perm = [1, 0, 2]
    boxes_p = [boxes[i] for i in perm]
    a_p = assign(boxes_p, [truth], 0.5)
    val = location_loss(a_p, HeadOutputs(np.zeros((3, 2)), offs[perm]), [truth], boxes_p)
    assert val == pytest.approx(base, abs=1e-12)


def test_location_loss_none_offsets():
    a, truths, boxes = _single_positive_setup()
    assert location_loss(a, HeadOutputs(np.array([[0.1, 0.9]]), None),
                         truths, boxes) == 0.0


def test_confidence_loss_uniform_eight_way():
    truth = TruthBox(Box(0.2, 0.1), 3)
    a = assign([Box(0.2, 0.1)], [truth], 0.7)
    heads = HeadOutputs(np.full((1, 8), 1.0 / 8.0), None)
    assert confidence_loss(a, heads, [truth]) == pytest.approx(math.log(8), abs=1e-9)


def test_confidence_loss_zero_at_perfect():
    truth = TruthBox(Box(0.2, 0.1), 1)
    boxes = [Box(0.2, 0.1), Box(0.6, 0.1)]
    a = sample_negatives(assign(boxes, [truth], 0.7), 3, 0)
    probs = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert confidence_loss(a, HeadOutputs(probs, None), [truth]) == 0.0


def test_confidence_loss_ignores_unsampled_negatives():
    truth = TruthBox(Box(0.0, 0.1), 1)
    boxes = [Box(0.0, 0.1)] + [Box(0.1 * i, 0.1) for i in range(2, 9)]
    a = sample_negatives(assign(boxes, [truth], 0.7), 3, 5)
    probs = np.full((8, 2), 0.5)
    base = confidence_loss(a, HeadOutputs(probs.copy(), None), [truth])
    flipped = probs.copy()
    for i in np.flatnonzero(~a.positive & ~a.sampled_negative):
        flipped[i] = [0.99, 0.01]
    assert confidence_loss(a, HeadOutputs(flipped, None), [truth]) == base


def test_confidence_loss_strictly_decreasing_in_matched_prob():
    truth = TruthBox(Box(0.2, 0.1), 1)
    a = assign([Box(0.2, 0.1)], [truth], 0.7)
    prev = None
    for p in (0.2, 0.5, 0.9, 0.99):
        v = confidence_loss(a, HeadOutputs(np.array([[1 - p, p]]), None), [truth])
        if prev is not None:
            assert v < prev
        prev = v


def test_confidence_loss_floor_prevents_inf():
    truth = TruthBox(Box(0.2, 0.1), 1)
    a = assign([Box(0.2, 0.1)], [truth], 0.7)
    v = confidence_loss(a, HeadOutputs(np.array([[1.0, 0.0]]), None), [truth])
    assert math.isfinite(v)
    assert v == pytest.approx(-math.log(1e-12), rel=1e-9)


def test_total_loss_alpha():
    a, truths, boxes = _single_positive_setup()
    heads = HeadOutputs(np.array([[0.5, 0.5]]), np.zeros((1, 2)))
    loc = location_loss(a, heads, truths, boxes)
    conf = confidence_loss(a, heads, truths)
    assert total_loss(a, heads, truths, boxes, alpha=1.0) == pytest.approx(loc + conf)
    assert total_loss(a, heads, truths, boxes, alpha=0.0) == pytest.approx(loc)
    assert total_loss(a, heads, truths, boxes, alpha=2.0) == pytest.approx(loc + 2 * conf)
    with pytest.raises(ValueError):
        total_loss(a, heads, truths, boxes, alpha=-0.1)


def test_total_loss_nonnegative():
    rng = np.random.default_rng(0)
    for _ in range(50):
        boxes = [Box(float(rng.uniform(0, 0.8)), float(rng.uniform(0.05, 0.2)))
                 for _ in range(6)]
        truths = [TruthBox(Box(float(rng.uniform(0, 0.8)),
                               float(rng.uniform(0.05, 0.2))), 1)]
        a = sample_negatives(assign(boxes, truths, 0.5), 3, 0)
        raw = rng.uniform(0.01, 1, size=(6, 2))
        probs = raw / raw.sum(axis=1, keepdims=True)
        heads = HeadOutputs(probs, rng.normal(size=(6, 2)))
        assert total_loss(a, heads, truths, boxes) >= 0.0
