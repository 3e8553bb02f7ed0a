import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import iou_raster, nms_reference
from sardet.boxes import (
    BBox,
    LossKind,
    box_loss_t,
    box_to_gaussian,
    diou,
    giou,
    iou,
    iou_matrix,
    nms,
    nwd,
    nwd_loss,
    nwd_loss_t,
    wasserstein_sq,
)
from sardet.tensor import Tensor, backward, grad_check

coord = st.floats(-200, 200, allow_nan=False)
side = st.floats(0.5, 80, allow_nan=False)
boxes = st.builds(BBox, coord, coord, side, side)


def random_box(gen, lo=-50, hi=50):
    return BBox(gen.uniform(lo, hi), gen.uniform(lo, hi), gen.uniform(1, 30), gen.uniform(1, 30))


def test_bbox_validation():
    with pytest.raises(ValueError):
        BBox(0, 0, 0, 1)
    with pytest.raises(ValueError):
        BBox(0, 0, 1, -2)
    with pytest.raises(ValueError):
        BBox(float("nan"), 0, 1, 1)
    b = BBox.from_corners(10, 20, 30, 60)
    assert (b.cx, b.cy, b.w, b.h) == (20, 40, 20, 40)
    assert b.corners() == (10, 20, 30, 60)


@pytest.mark.parametrize(
    "box,mu,sigma",
    [((10, 10, 4, 8), (10, 10), (4, 16)), ((0, 0, 2, 2), (0, 0), (1, 1)), ((0.5, 0.5, 1, 1), (0.5, 0.5), (0.25, 0.25))],
)
def test_box_to_gaussian(box, mu, sigma):
    g = box_to_gaussian(BBox(*box))
    assert g.mu == mu and g.sigma == sigma
    np.testing.assert_array_equal(g.covariance, np.diag(sigma))


def test_wasserstein_examples():
    a = BBox(3, 4, 5, 6)
    assert wasserstein_sq(a, a) == 0
    assert wasserstein_sq(BBox(0, 0, 2, 2), BBox(0, 0, 4, 4)) == 2
    assert wasserstein_sq(BBox(1, 1, 2, 2), BBox(4, 5, 2, 2)) == 25


def test_nwd_examples():
    a, b = BBox(1, 1, 2, 2), BBox(4, 5, 2, 2)
    assert nwd(a, a, 3.0) == 1.0
    assert nwd(a, b, 5.0) == pytest.approx(math.exp(-1), abs=1e-15)
    assert nwd_loss(a, a, 5.0) == 0.0
    assert nwd_loss(a, b, 5.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)
    with pytest.raises(ValueError):
        nwd(a, b, 0.0)
    with pytest.raises(ValueError):
        LossKind("nwd", -1.0)
    with pytest.raises(ValueError):
        LossKind("ciou")


def test_nwd_monotone_along_axis():
    a = BBox(0, 0, 6, 4)
    vals = [nwd(a, a.translated(0.3 * k, 0), 12.8) for k in range(100)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_iou_family_examples():
    a, b = BBox(2, 2, 4, 4), BBox(4, 2, 4, 4)
    assert iou(a, b) == pytest.approx(1 / 3, abs=1e-15)
    assert giou(a, b) == pytest.approx(1 / 3, abs=1e-15)
    c, d = BBox(1, 1, 2, 2), BBox(5, 5, 2, 2)
    assert iou(c, d) == 0
    assert giou(c, d) == pytest.approx(-28 / 36, abs=1e-15)
    assert diou(c, d) == pytest.approx(-4 / 9, abs=1e-15)


def test_small_offset_sensitivity():
    a = BBox(10, 10, 4, 4)
    b = a.translated(1, 0)
    assert iou(a, b) == 0.6
    assert nwd(a, b, 12.8) == pytest.approx(0.9249, abs=1e-4)


def test_iou_matches_rasterization():
    # corners on the 0.1 px grid so 10x sample counting measures areas exactly
    gen = np.random.default_rng(0)

    def box():
        x1, y1 = gen.integers(0, 300, 2) / 10
        w, h = gen.integers(5, 200, 2) / 10
        return BBox.from_corners(x1, y1, x1 + w, y1 + h)

    for _ in range(1000):
        a, b = box(), box()
        assert abs(iou(a, b) - iou_raster(a, b, 10)) < 2e-3


def test_iou_matrix_agrees_with_scalar():
    gen = np.random.default_rng(1)
    a = [random_box(gen) for _ in range(7)]
    b = [random_box(gen) for _ in range(5)]
    m = iou_matrix(np.array([x.as_array() for x in a]), np.array([x.as_array() for x in b]))
    for i in range(7):
        for j in range(5):
            assert m[i, j] == pytest.approx(iou(a[i], b[j]), abs=1e-14)


# -- invariants ------------------------------------------------------------

FUNCS = [wasserstein_sq, lambda a, b: nwd(a, b, 12.8), iou, giou, diou]


@settings(max_examples=300, deadline=None)
@given(boxes, boxes)
def test_symmetry(a, b):
    for f in FUNCS:
        assert f(a, b) == pytest.approx(f(b, a), abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(boxes, boxes, st.floats(-100, 100), st.floats(-100, 100))
def test_translation_invariance(a, b, dx, dy):
    a2, b2 = a.translated(dx, dy), b.translated(dx, dy)
    for f in FUNCS:
        # translating rounds the centers; compare at a scale-aware tolerance
        assert f(a2, b2) == pytest.approx(f(a, b), abs=1e-9, rel=1e-9)


@settings(max_examples=300, deadline=None)
@given(boxes, boxes, st.floats(0.01, 100))
def test_positive_homogeneity(a, b, s):
    assert wasserstein_sq(a.scaled(s), b.scaled(s)) == pytest.approx(s * s * wasserstein_sq(a, b), rel=1e-9, abs=1e-300)


@settings(max_examples=300, deadline=None)
@given(boxes, boxes)
def test_ranges(a, b):
    assert 0.0 <= iou(a, b) <= 1.0
    assert 0.0 < nwd(a, b, 12.8) <= 1.0 or wasserstein_sq(a, b) > 0
    assert giou(a, b) <= iou(a, b) + 1e-15
    assert -1.0 < giou(a, b) <= 1.0
    assert -1.0 < diou(a, b) <= 1.0
    assert nwd_loss(a, a, 12.8) == 0.0


# -- NMS -------------------------------------------------------------------

def test_nms_examples():
    b1 = BBox(10, 10, 4, 4)
    b3 = BBox(50, 50, 4, 4)
    kept = nms([(b1, 0.9), (b1, 0.8), (b3, 0.7)], 0.5, 0.25)
    assert kept == [(b1, 0.9), (b3, 0.7)]
    assert nms([(b1, 0.6)]) == [(b1, 0.6)]
    assert nms([]) == []
    assert nms([(b1, 0.1)]) == []
    with pytest.raises(ValueError):
        nms([(b1, 0.9)], 1.5)


def test_nms_ties_keep_insertion_order():
    a, b = BBox(10, 10, 4, 4), BBox(10.5, 10, 4, 4)
    assert nms([(b, 0.5), (a, 0.5)], 0.3, 0.0) == [(b, 0.5)]


def test_nms_matches_reference():
    gen = np.random.default_rng(3)
    for _ in range(20):
        dets = [(random_box(gen, 0, 60), float(gen.choice([0.3, 0.5, gen.random()]))) for _ in range(200)]
        assert nms(dets, 0.45, 0.25) == nms_reference(dets, 0.45, 0.25)


# -- tensor losses -----------------------------------------------------------

def _pred_target(seed, n=6):
    gen = np.random.default_rng(seed)
    t = np.column_stack([gen.uniform(5, 50, n), gen.uniform(5, 50, n), gen.uniform(2, 20, n), gen.uniform(2, 20, n)])
    p = t + gen.normal(0, 2.0, t.shape)
    p[:, 2:] = np.abs(p[:, 2:]) + 0.5
    return p, t


@pytest.mark.parametrize("name", ["nwd", "iou", "giou", "diou"])
def test_tensor_losses_match_scalar(name):
    p, t = _pred_target(0)
    kind = LossKind(name, 12.8)
    got = box_loss_t(Tensor(p), t, kind).data
    scalar = {
        "nwd": lambda a, b: nwd_loss(a, b, 12.8),
        "iou": lambda a, b: 1 - iou(a, b),
        "giou": lambda a, b: 1 - giou(a, b),
        "diou": lambda a, b: 1 - diou(a, b),
    }[name]
    ref = [scalar(BBox(*pi), BBox(*ti)) for pi, ti in zip(p, t)]
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("name", ["nwd", "giou", "diou", "iou"])
def test_tensor_loss_gradients(name):
    for seed in range(5):
        p, t = _pred_target(seed)
        rep = grad_check(lambda x: box_loss_t(x, t, LossKind(name, 12.8)).sum(), Tensor(p))
        assert rep.max_rel_error < 1e-5, (seed, rep)


def test_nwd_gradient_tight_and_zero_at_match():
    p, t = _pred_target(9, 3)
    rep = grad_check(lambda x: nwd_loss_t(x, t, 5.0).sum(), Tensor(p))
    assert rep.max_rel_error < 1e-7
    x = Tensor(t.copy(), requires_grad=True)
    backward(nwd_loss_t(x, t, 5.0).sum())
    np.testing.assert_array_equal(x.grad, 0.0)
