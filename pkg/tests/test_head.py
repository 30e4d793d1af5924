import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siamcar.bbox import BBox
from siamcar.head import (
    HeadOutput, centerness_score, decode_box, encode_targets, head_forward,
    head_param_shapes, iou_loss, total_loss,
)
from siamcar.tensor import ShapeError, Tape, Tensor, exp, finite_diff_grad, max_rel_error


def head_weights(rng, cr=16, tower=8, scale=0.1):
    return {k: Tensor(rng.normal(scale=scale, size=s)) for k, s in head_param_shapes(cr, tower).items()}


def target_at(gt, xs, ys):
    return encode_targets(gt, (np.asarray(xs, float), np.asarray(ys, float)))


# -- head forward ---------------------------------------------------------------

def test_head_shapes():
    rng = np.random.default_rng(0)
    out = head_forward(Tensor(rng.normal(size=(16, 9, 9))), head_weights(rng))
    assert out.cls.shape == (2, 9, 9) and out.reg.shape == (4, 9, 9) and out.cen.shape == (1, 9, 9)


def test_zero_head_weights():
    zeros = {k: Tensor(np.zeros(s)) for k, s in head_param_shapes(16, 8).items()}
    out = head_forward(Tensor(np.random.default_rng(1).normal(size=(16, 5, 5))), zeros)
    assert not out.cls.data.any()
    np.testing.assert_array_equal(out.reg.data, np.ones((4, 5, 5)))


def test_head_rejects_wrong_branch_width():
    w = head_weights(np.random.default_rng(2))
    w["head.reg.proj.w"] = Tensor(np.zeros((3, 8, 1, 1)))
    with pytest.raises(ShapeError):
        head_forward(Tensor(np.zeros((16, 5, 5))), w)


# -- targets ------------------------------------------------------------------

def test_encode_examples():
    t = target_at(BBox(2, 3, 10, 11), [5, 1, 2], [7])
    assert t.dists.data[:, 0, 0].tolist() == [3, 4, 5, 4] and t.mask.data[0, 0, 0] == 1
    assert t.dists.data[0, 0, 1] == -1 and t.mask.data[0, 0, 1] == 0
    assert t.dists.data[0, 0, 2] == 0 and t.mask.data[0, 0, 2] == 0
    with pytest.raises(ValueError):
        target_at(BBox(3, 3, 3, 5), [1], [1])


def test_centerness_examples():
    t = target_at(BBox(0, 0, 4, 4), [2, 1, 9], [2])
    c = centerness_score(t).data[0, 0]
    assert c[0] == 1.0 and c[2] == 0.0
    t = target_at(BBox(-1, -2, 3, 2), [0], [0])  # l,t,r,b = 1,2,3,2
    assert abs(centerness_score(t).data[0, 0, 0] - math.sqrt(1 / 3)) < 1e-12
    assert abs(math.sqrt(1 / 3) - 0.577350) < 1e-6


@settings(max_examples=200, deadline=None)
@given(st.integers(-40, 40), st.integers(-40, 40), st.integers(1, 60), st.integers(1, 60),
       st.integers(1, 9), st.integers(-8, 8))
def test_integer_round_trip_is_exact(x0, y0, w, h, stride, offset):
    gt = BBox(x0, y0, x0 + w, y0 + h)
    xs = np.arange(12) * stride + offset
    t = target_at(gt, xs, xs)
    m = t.mask.data[0] > 0
    X, Y = np.meshgrid(xs, xs)
    for j, i in zip(*np.nonzero(m)):
        assert decode_box(X[j, i], Y[j, i], t.dists.data[:, j, i]) == (gt.x0, gt.y0, gt.x1, gt.y1)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.5, 80), st.floats(0.5, 80))
def test_centerness_bounds_property(x0, y0, w, h):
    t = target_at(BBox(x0, y0, x0 + w, y0 + h), np.linspace(-60, 140, 17), np.linspace(-60, 140, 17))
    c = centerness_score(t).data[0]
    m = t.mask.data[0] > 0
    assert np.all((c >= 0) & (c <= 1))
    assert np.all(c[~m] == 0)


# -- losses -------------------------------------------------------------------

def test_iou_loss_examples():
    assert iou_loss([1, 2, 3, 4], [1, 2, 3, 4]) == 0.0
    assert iou_loss([2, 2, 2, 2], [2, 2, 2, 2]) == 0.0
    assert abs(iou_loss([1, 2, 3, 2], [2, 2, 2, 2]) + math.log(0.6)) < 1e-12
    assert abs(iou_loss([1, 2, 3, 2], [2, 2, 2, 2]) - 0.5108) < 1e-4
    with pytest.raises(ValueError):
        iou_loss([0, 1, 1, 1], [1, 1, 1, 1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.1, 50), min_size=8, max_size=8))
def test_iou_loss_non_negative(v):
    loss = iou_loss(v[:4], v[4:])
    assert loss >= 0
    if v[:4] != v[4:]:
        assert loss > 0


def _instance(rng, size=8):
    gt = BBox(10.0, 12.0, 42.0, 38.0)
    xs = np.arange(size) * 8.0 - 4.0
    target = encode_targets(gt, (xs, xs))
    return target, centerness_score(target)


def _perfect_output(target, cen_gt):
    m = target.mask.data[0] > 0
    reg = np.where(m, target.dists.data, 1.0)
    c = np.clip(cen_gt.data[0], 1e-12, 1 - 1e-12)
    cen = np.log(c) - np.log1p(-c)
    cls = np.stack([np.where(m, -30.0, 30.0), np.where(m, 30.0, -30.0)])
    return HeadOutput(cls=Tensor(cls), reg=Tensor(reg), cen=Tensor(cen[None]))


def test_loss_minima():
    target, cen_gt = _instance(np.random.default_rng(0))
    bundle = total_loss(_perfect_output(target, cen_gt), target, cen_gt)
    assert bundle.reg_loss.item() == 0.0
    assert bundle.cen_loss.item() < 1e-6
    assert bundle.total.item() < 1e-9


def test_uniform_logits_give_ln2():
    target, cen_gt = _instance(np.random.default_rng(0))
    out = _perfect_output(target, cen_gt)
    out.cls = Tensor(np.zeros_like(out.cls.data))
    assert abs(total_loss(out, target, cen_gt).cls_loss.item() - math.log(2)) < 1e-9


def test_total_is_weighted_sum():
    rng = np.random.default_rng(1)
    target, cen_gt = _instance(rng)
    out = HeadOutput(cls=Tensor(rng.normal(size=(2, 8, 8))), reg=Tensor(rng.uniform(1, 30, size=(4, 8, 8))),
                     cen=Tensor(rng.normal(size=(1, 8, 8))))
    for l1, l2 in [(1.0, 3.0), (0.5, 0.0), (2.0, 7.0)]:
        b = total_loss(out, target, cen_gt, l1, l2)
        assert b.total.item() == b.cls_loss.item() + l1 * b.cen_loss.item() + l2 * b.reg_loss.item()
        assert min(b.cls_loss.item(), b.cen_loss.item(), b.reg_loss.item()) >= 0


def test_empty_foreground_is_flagged():
    xs = np.arange(8) * 8.0
    target = encode_targets(BBox(500, 500, 520, 520), (xs, xs))
    rng = np.random.default_rng(2)
    out = HeadOutput(cls=Tensor(rng.normal(size=(2, 8, 8))), reg=Tensor(np.ones((4, 8, 8))),
                     cen=Tensor(np.zeros((1, 8, 8))))
    b = total_loss(out, target, centerness_score(target))
    assert b.empty_foreground and b.reg_loss.item() == 0.0 and b.cen_loss.item() == 0.0


def test_total_loss_contract_errors():
    target, cen_gt = _instance(np.random.default_rng(0))
    out = _perfect_output(target, cen_gt)
    bad = HeadOutput(cls=out.cls, reg=Tensor(np.ones((4, 7, 7))), cen=out.cen)
    with pytest.raises(ShapeError):
        total_loss(bad, target, cen_gt)
    neg = HeadOutput(cls=out.cls, reg=Tensor(-out.reg.data), cen=out.cen)
    with pytest.raises(ValueError):
        total_loss(neg, target, cen_gt)


def test_total_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    target, cen_gt = _instance(rng)
    resp = rng.normal(size=(4, 8, 8))
    weights = head_weights(rng, cr=4, tower=4, scale=0.3)
    names = sorted(weights)

    def loss_of(r, w):
        out = head_forward(r, w)
        return total_loss(out, target, cen_gt).total

    r = Tensor(resp, requires_grad=True)
    for p in weights.values():
        p.requires_grad = True
    with Tape() as tape:
        tape.backward(loss_of(r, weights))
    numeric = finite_diff_grad(lambda t: loss_of(t, weights), Tensor(resp))
    assert max_rel_error(r.grad, numeric) < 1e-3
    for name in names:
        frozen = {k: Tensor(v.data) for k, v in weights.items()}

        def f(t, name=name):
            return loss_of(Tensor(resp), {**frozen, name: t})

        assert max_rel_error(weights[name].grad, finite_diff_grad(f, weights[name])) < 1e-3, name


def test_reg_gradient_through_exp():
    rng = np.random.default_rng(4)
    target, cen_gt = _instance(rng)
    raw = rng.normal(1.5, 0.5, size=(4, 8, 8))
    cls, cen = Tensor(rng.normal(size=(2, 8, 8))), Tensor(rng.normal(size=(1, 8, 8)))

    def f(t):
        return total_loss(HeadOutput(cls=cls, reg=exp(t), cen=cen), target, cen_gt).total

    t = Tensor(raw, requires_grad=True)
    with Tape() as tape:
        tape.backward(f(t))
    assert max_rel_error(t.grad, finite_diff_grad(f, Tensor(raw))) < 1e-3
