import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siamcar.bbox import BBox
from siamcar.metrics import (
    SequenceResult, average_overlap, center_errors, evaluate_results, iou, precision_at,
    precision_curve, success_auc, success_curve, success_rate,
)

from oracles import brute_iou, brute_metrics


def shifted(box, dx):
    return BBox(box.x0 + dx, box.y0, box.x1 + dx, box.y1)


GT = BBox(0, 0, 10, 10)


def test_iou_basics():
    assert iou(GT, GT) == 1.0
    assert iou(GT, shifted(GT, 10)) == 0.0
    assert iou(GT, shifted(GT, 5)) == pytest.approx(50 / 150)
    assert iou(GT, BBox(3, 3, 3, 8)) == 0.0


def test_sr_is_strict():
    # IoUs 1.0, 0.5, 0.0
    half = BBox(0, 0, 10, 5)
    res = [SequenceResult("a", [(GT, GT), (half, GT), (shifted(GT, 20), GT)])]
    assert iou(half, GT) == 0.5
    assert success_rate(res, 0.5) == pytest.approx(1 / 3)


def test_auc_extremes():
    perfect = [SequenceResult("a", [(GT, GT)] * 5)]
    lost = [SequenceResult("a", [(shifted(GT, 30), GT)] * 5)]
    assert success_auc(perfect) == 1.0
    assert success_auc(lost) == 0.0
    assert average_overlap(perfect) == 1.0 and average_overlap(lost) == 0.0


def test_success_curve_monotone_and_auc_close_to_ao():
    rng = np.random.default_rng(0)
    frames = [(shifted(GT, float(d)), GT) for d in rng.uniform(0, 12, 300)]
    res = [SequenceResult("a", frames)]
    curve = success_curve(res)
    assert np.all(np.diff(curve) <= 0)
    # AUC of the success plot approximates the average overlap
    assert abs(success_auc(res) - average_overlap(res)) < 0.02


def test_precision():
    res = [SequenceResult("a", [(shifted(GT, 20), GT), (shifted(GT, 21), GT), (GT, GT)])]
    assert precision_at(res) == pytest.approx(2 / 3)
    np.testing.assert_allclose(center_errors(res), [20, 21, 0])
    curve = precision_curve(res)
    assert curve[0] == pytest.approx(1 / 3) and curve[-1] == 1.0


def test_ao_per_sequence_variant():
    a = SequenceResult("a", [(GT, GT)] * 3)
    b = SequenceResult("b", [(shifted(GT, 30), GT)])
    assert average_overlap([a, b]) == 0.75
    assert average_overlap([a, b], per_sequence=True) == 0.5


def test_contract_errors():
    with pytest.raises(ValueError):
        SequenceResult("a", [])
    with pytest.raises(ValueError):
        SequenceResult("a", [(GT, BBox(5, 5, 5, 9))])
    with pytest.raises(ValueError):
        average_overlap([])


def random_results(rng):
    out = []
    for s in range(int(rng.integers(1, 5))):
        frames = []
        for _ in range(int(rng.integers(1, 30))):
            g = BBox.from_xywh(*rng.uniform(0, 100, 2), *rng.uniform(5, 40, 2))
            if rng.uniform() < 0.1:
                p = g
            else:
                p = BBox.from_xywh(g.x0 + rng.normal(0, 8), g.y0 + rng.normal(0, 8), *rng.uniform(3, 45, 2))
            frames.append((p, g))
        out.append(SequenceResult(f"s{s}", frames))
    return out


def test_metrics_match_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(100):
        res = random_results(rng)
        ref = brute_metrics(res)
        rep = evaluate_results(res)
        assert rep.ao == ref["ao"]
        assert rep.sr[0.5] == ref["sr5"] and rep.sr[0.75] == ref["sr75"]
        assert rep.auc == ref["auc"]
        assert rep.precision == ref["precision"]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4), st.floats(1, 30), st.floats(1, 30),
       st.floats(1, 30), st.floats(1, 30))
def test_iou_matches_oracle_and_is_symmetric(xy, w1, h1, w2, h2):
    a = BBox.from_xywh(xy[0], xy[1], w1, h1)
    b = BBox.from_xywh(xy[2], xy[3], w2, h2)
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou(b, a), abs=1e-12)
    assert v == pytest.approx(brute_iou(a, b), abs=1e-12)


def test_report_kv_is_deterministic_and_fps_free():
    res = random_results(np.random.default_rng(2))
    a = evaluate_results(res, fps=10.0).to_kv()
    b = evaluate_results(res, fps=99.0).to_kv()
    assert a == b and "fps" not in a
