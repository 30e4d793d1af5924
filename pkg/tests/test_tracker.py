import math

import numpy as np
import pytest

from siamcar.bbox import BBox
from siamcar.data import SyntheticSpec, render_sequence
from siamcar.head import HeadOutput, centerness_score, encode_targets
from siamcar.metrics import SequenceResult, average_overlap
from siamcar.model import ModelConfig, SiamCARModel
from siamcar.tensor import Tensor
from siamcar.tracker import (
    TrackerHyper, cosine_window, grid_to_image, init_track, penalty, search_grid, search_scale,
    select_query, topk_average, track_frame,
)

from oracles import brute_argmax, brute_topk


def test_grid_to_image_examples():
    assert grid_to_image(4, 4, 9, 8, 128) == (64.0, 64.0)
    assert grid_to_image(0, 0, 9, 8, 128) == (32.0, 32.0)
    # stride 1 with search = (w - 1) * stride: the grid is the pixel lattice itself
    assert grid_to_image(3, 5, 7, 1, 6) == (3.0, 5.0)


def test_penalty_examples():
    assert penalty((20, 30), (20, 30), 0.04) == 1.0
    assert abs(penalty((40, 60), (20, 30), 0.04) - math.exp(-0.04)) < 1e-12
    assert abs(penalty((40, 60), (20, 30), 0.04) - 0.9608) < 1e-4
    assert penalty((5, 90), (20, 30), 0.0) == 1.0


def test_penalty_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = tuple(rng.uniform(1, 80, 2)), tuple(rng.uniform(1, 80, 2))
        k = rng.uniform(0, 1)
        assert penalty(a, b, k) == pytest.approx(penalty(b, a, k), rel=1e-12)
        assert 0 < penalty(a, b, k) <= 1


def test_cosine_window_peak():
    win = cosine_window(9)
    assert win.max() == 1.0 and np.unravel_index(np.argmax(win), win.shape) == (4, 4)
    np.testing.assert_allclose(win, win.T)


def test_select_query_examples():
    rng = np.random.default_rng(1)
    maps = [rng.uniform(size=(9, 9)) for _ in range(3)]
    assert select_query(*maps, cosine_window(9), 1.0) == (4, 4)
    score = np.zeros((9, 9))
    score[2, 7] = 1.0
    ones = np.ones((9, 9))
    assert select_query(score, ones, ones, cosine_window(9), 0.0) == (7, 2)
    assert select_query(np.zeros((9, 9)), ones, ones, np.zeros((9, 9)), 0.0) == (0, 0)


def test_select_query_scale_invariance():
    rng = np.random.default_rng(2)
    for _ in range(50):
        cls, cen, pen = (rng.uniform(size=(9, 9)) for _ in range(3))
        q = select_query(cls, cen, pen, cosine_window(9), 0.0)
        assert select_query(cls * 7.5, cen, pen, cosine_window(9), 0.0) == q


def test_select_query_matches_exhaustive_scan():
    rng = np.random.default_rng(3)
    for _ in range(200):
        cls, cen, pen = (rng.uniform(size=(9, 9)) for _ in range(3))
        lam = float(rng.uniform())
        win = cosine_window(9)
        assert select_query(cls, cen, pen, win, lam) == \
            brute_argmax(cls.tolist(), cen.tolist(), pen.tolist(), win.tolist(), lam)


def _random_boxes(rng, h=9, w=9):
    x0, y0 = rng.uniform(0, 50, (2, h, w))
    return np.stack([x0, y0, x0 + rng.uniform(1, 40, (h, w)), y0 + rng.uniform(1, 40, (h, w))])


def test_topk_examples():
    rng = np.random.default_rng(4)
    scores = rng.uniform(size=(9, 9))
    same = np.broadcast_to(np.array([1.0, 2.0, 11.0, 7.0])[:, None, None], (4, 9, 9))
    assert topk_average((4, 4), scores, same, 8, 3) == BBox(1.0, 2.0, 11.0, 7.0)
    boxes = _random_boxes(rng)
    nb = [(j, i) for j in range(3, 6) for i in range(3, 6)]
    j, i = max(nb, key=lambda c: scores[c])
    assert topk_average((4, 4), scores, boxes, 8, 1) == BBox(*boxes[:, j, i])
    got = topk_average((0, 0), scores, boxes, 8, 3)
    assert got == BBox(*brute_topk((0, 0), scores.tolist(), boxes.tolist(), 3))


def test_topk_uses_all_candidates_when_k_too_large():
    rng = np.random.default_rng(5)
    scores, boxes = rng.uniform(size=(9, 9)), _random_boxes(rng)
    got = topk_average((8, 8), scores, boxes, 8, 9)
    assert got == BBox(*brute_topk((8, 8), scores.tolist(), boxes.tolist(), 9))


def test_topk_matches_subset_enumeration_and_stays_in_hull():
    rng = np.random.default_rng(6)
    for _ in range(200):
        scores, boxes = rng.uniform(size=(9, 9)), _random_boxes(rng)
        q = tuple(int(v) for v in rng.integers(0, 9, 2))
        k = int(rng.integers(1, 10))
        got = topk_average(q, scores, boxes, 8, k)
        assert got == BBox(*brute_topk(q, scores.tolist(), boxes.tolist(), k))
        qi, qj = q
        nb = boxes[:, max(qj - 1, 0):qj + 2, max(qi - 1, 0):qi + 2].reshape(4, -1)
        for c, v in enumerate((got.x0, got.y0, got.x1, got.y1)):
            assert nb[c].min() - 1e-9 <= v <= nb[c].max() + 1e-9


def test_hyper_validation():
    with pytest.raises(ValueError):
        TrackerHyper(lambda_d=1.5)
    with pytest.raises(ValueError):
        TrackerHyper(top_k=10)
    with pytest.raises(ValueError):
        TrackerHyper(n_neighbors=7)
    with pytest.raises(ValueError):
        TrackerHyper(gamma=-0.1)
    assert TrackerHyper(n_neighbors=24, top_k=25).top_k == 25


def test_hyper_from_file(tmp_path):
    (tmp_path / "t.cfg").write_text("lambda_d=0.25\npenalty_k=0.1\ngamma=0.5\nn_neighbors=8\ntop_k=2\n")
    h = TrackerHyper.from_file(tmp_path / "t.cfg")
    assert (h.lambda_d, h.penalty_k, h.gamma, h.top_k) == (0.25, 0.1, 0.5, 2)


# -- stateful tracking ---------------------------------------------------------

@pytest.fixture(scope="module")
def model():
    return SiamCARModel.initialize(ModelConfig(), seed=0)


@pytest.fixture(scope="module")
def sequence():
    spec = SyntheticSpec(motion="linear", vx=2.0, vy=-1.0, frames=12, seed=5)
    frames, gt = render_sequence(spec)
    return [f.transpose(2, 0, 1).astype(np.float64) for f in frames], [BBox.from_xywh(*b) for b in gt]


def test_init_track_contract(model, sequence):
    frames, gt = sequence
    a = init_track(model, frames[0], gt[0])
    b = init_track(model, frames[0], gt[0])
    assert a.prev_center == gt[0].center and a.prev_size == (gt[0].width, gt[0].height)
    assert a.template_feat.data.tobytes() == b.template_feat.data.tobytes()
    with pytest.raises(ValueError):
        init_track(model, frames[0], BBox(5, 5, 5, 9))
    with pytest.raises(ValueError):
        init_track(model, frames[0], gt[0], TrackerHyper(search_size=160))


def test_track_frame_deterministic_and_gamma_zero(model, sequence):
    frames, gt = sequence
    st = init_track(model, frames[0], gt[0], TrackerHyper(gamma=0.0))
    b1, s1 = track_frame(st, frames[1])
    b2, s2 = track_frame(st, frames[1])
    assert b1 == b2 and s1 == s2
    for f in frames[1:]:
        box, st = track_frame(st, f)
        assert st.prev_size == (gt[0].width, gt[0].height)
        assert box.width == pytest.approx(gt[0].width, abs=1e-9)
        assert box.height == pytest.approx(gt[0].height, abs=1e-9)


def test_window_only_tracker_reports_previous_center(model, sequence):
    frames, gt = sequence
    st = init_track(model, frames[0], gt[0], TrackerHyper(lambda_d=1.0, top_k=1))
    box, _ = track_frame(st, frames[1])
    # query is the map centre; only the regressed (l, t, r, b) asymmetry moves the box
    cx, cy = box.center
    assert abs(cx - gt[0].center[0]) <= 8 / search_scale(st)
    assert abs(cy - gt[0].center[1]) <= 8 / search_scale(st)


class PerfectHead:
    """Stands in for the trained head: emits the exact maps for a known box."""

    def __init__(self, model):
        self.model = model
        self.box = None

    def __call__(self, response):
        size = response.shape[1]
        target = encode_targets(self.box, search_grid(size, 8, 128))
        m = target.mask.data
        c = np.clip(centerness_score(target).data, 1e-3, 1 - 1e-3)
        return HeadOutput(cls=Tensor(np.concatenate([2.5 - 5 * m, 5 * m - 2.5])),
                          reg=Tensor(np.where(m > 0, target.dists.data, 1.0)),
                          cen=Tensor(np.log(c / (1 - c))))


@pytest.mark.parametrize("crop_scale", ["initial", "previous"])
def test_perfect_head_tracks_exactly(sequence, crop_scale):
    frames, gt = sequence
    model = SiamCARModel.initialize(ModelConfig(), seed=1)
    head = PerfectHead(model)
    model.head = head
    st = init_track(model, frames[0], gt[0], TrackerHyper(crop_scale=crop_scale))
    pairs = [(gt[0], gt[0])]
    for f, g in zip(frames[1:], gt[1:]):
        s = search_scale(st)
        cx, cy = st.prev_center
        head.box = BBox((g.x0 - cx) * s + 64, (g.y0 - cy) * s + 64, (g.x1 - cx) * s + 64, (g.y1 - cy) * s + 64)
        box, st = track_frame(st, f)
        pairs.append((box, g))
    assert average_overlap([SequenceResult("s", pairs)]) > 0.99
