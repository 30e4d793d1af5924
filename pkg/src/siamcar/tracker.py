"""Tracking phase: score re-ranking, query selection and top-k box averaging."""
from dataclasses import dataclass, fields, replace

import numpy as np

from .bbox import BBox
from .config import coerce, read_kv
from .crop import context_size, crop_and_resize
from .tensor import Tensor, sigmoid, softmax2


@dataclass(frozen=True)
class TrackerHyper:
    lambda_d: float = 0.4
    penalty_k: float = 0.04
    gamma: float = 0.3
    n_neighbors: int = 8
    top_k: int = 3
    template_size: int = 64
    search_size: int = 128
    stride: int = 8
    context: float = 0.5
    min_size: float = 4.0
    # "initial": search crops keep the scale set by the first-frame box (the
    # scale the training pairs are cut at); "previous": re-derive it from the
    # smoothed size every frame, SiamFC style
    crop_scale: str = "initial"

    def __post_init__(self):
        if self.crop_scale not in ("initial", "previous"):
            raise ValueError(f"crop_scale must be 'initial' or 'previous', got {self.crop_scale!r}")
        if not 0.0 <= self.lambda_d <= 1.0:
            raise ValueError("lambda_d must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.penalty_k < 0:
            raise ValueError("penalty_k must be non-negative")
        neighborhood_radius(self.n_neighbors)
        if not 1 <= self.top_k <= self.n_neighbors + 1:
            raise ValueError("top_k must be in [1, n_neighbors + 1]")

    @classmethod
    def from_mapping(cls, values, source="<config>"):
        names = {f.name: f.default for f in fields(cls)}
        return cls(**coerce(names, values, source))

    @classmethod
    def from_file(cls, path):
        return cls.from_mapping(read_kv(path), source=str(path))


@dataclass(frozen=True)
class TrackerState:
    model: object
    template_feat: Tensor
    prev_center: tuple
    prev_size: tuple
    hyper: TrackerHyper
    frame_index: int = 0
    init_size: tuple = None


@dataclass
class Prediction6D:
    """Per-location (cls, cen, l, t, r, b), each an h×w array."""
    cls: np.ndarray
    cen: np.ndarray
    l: np.ndarray
    t: np.ndarray
    r: np.ndarray
    b: np.ndarray


def neighborhood_radius(n):
    r = int(round((np.sqrt(n + 1) - 1) / 2))
    if r < 1 or (2 * r + 1) ** 2 - 1 != n:
        raise ValueError(f"n_neighbors must be (2r+1)^2 - 1 (8, 24, ...), got {n}")
    return r


def grid_to_image(i, j, w, stride, search_size):
    """Map response-map column ``i`` / row ``j`` to search-region pixels (x, y)."""
    offset = (search_size - (w - 1) * stride) / 2.0
    return (i * stride + offset, j * stride + offset)


def search_grid(w, stride, search_size):
    """(xs, ys) coordinate vectors of a ``w``×``w`` response map."""
    coords = np.array([grid_to_image(i, 0, w, stride, search_size)[0] for i in range(w)])
    return coords, coords.copy()


def _change(r):
    return np.maximum(r, 1.0 / r)


def _padded_scale(w, h):
    pad = (w + h) * 0.5
    return np.sqrt((w + pad) * (h + pad))


def penalty_map(w, h, prev_w, prev_h, k):
    """Vectorised scale/aspect change penalty exp(-k (r_c s_c - 1))."""
    w = np.asarray(w, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    r_c = _change((w / h) / (prev_w / prev_h))
    s_c = _change(_padded_scale(w, h) / _padded_scale(prev_w, prev_h))
    return np.exp(-k * (r_c * s_c - 1.0))


def penalty(pred_size, prev_size, k):
    return float(penalty_map(pred_size[0], pred_size[1], prev_size[0], prev_size[1], k))


def cosine_window(w):
    win = np.outer(np.hanning(w), np.hanning(w))
    return win / win.max()


def _arr(x):
    a = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return a.reshape(a.shape[-2:])


def select_query(cls_fg, cen, penalties, window, lambda_d):
    """argmax of (1 - lambda_d) * cls * cen * p + lambda_d * window.

    Returns (i, j) = (column, row); ties go to the smallest row-major index.
    """
    cls_fg, cen, penalties, window = (_arr(a) for a in (cls_fg, cen, penalties, window))
    if not (cls_fg.shape == cen.shape == penalties.shape == window.shape):
        raise ValueError("select_query maps must share one shape")
    scores = (1.0 - lambda_d) * cls_fg * cen * penalties + lambda_d * window
    flat = int(np.argmax(scores))
    j, i = divmod(flat, scores.shape[1])
    return i, j


def topk_average(q, scores, boxes, n=8, k=3):
    """Score-weighted mean of the best ``k`` boxes around query ``q``.

    ``boxes`` is 4×h×w (x0, y0, x1, y1 per location); the candidate set is
    ``q`` plus its ``n`` neighbours, clipped to the map.
    """
    scores = _arr(scores)
    boxes = np.asarray(boxes, dtype=np.float64)
    h, w = scores.shape
    rad = neighborhood_radius(n)
    qi, qj = q
    cand = [(j, i) for j in range(max(0, qj - rad), min(h, qj + rad + 1))
            for i in range(max(0, qi - rad), min(w, qi + rad + 1))]
    # stable sort keeps row-major order among equal scores
    order = sorted(range(len(cand)), key=lambda c: -scores[cand[c]])
    chosen = sorted(cand[c] for c in order[:min(k, len(cand))])
    wts = [float(scores[c]) for c in chosen]
    total = sum(wts)
    if total <= 0:
        wts, total = [1.0] * len(chosen), float(len(chosen))
    # plain left-to-right sums in row-major order: the result does not depend
    # on how the candidates were ranked
    out = [0.0, 0.0, 0.0, 0.0]
    for wt, (j, i) in zip(wts, chosen):
        wt = wt / total
        for c in range(4):
            out[c] += wt * float(boxes[c, j, i])
    return BBox(*out)


def decode_predictions(head_out):
    fg = softmax2(head_out.cls).data[1]
    cen = sigmoid(head_out.cen).data[0]
    l, t, r, b = head_out.reg.data
    return Prediction6D(cls=fg, cen=cen, l=l, t=t, r=r, b=b)


def init_track(model, template_image, gt, hyper=None):
    """Crop the template around ``gt`` and cache its features for the whole track."""
    hyper = hyper or TrackerHyper()
    if not gt.is_valid():
        raise ValueError(f"degenerate initial box {gt}")
    cfg = model.config
    if (hyper.template_size, hyper.search_size, hyper.stride) != (cfg.template_size, cfg.search_size, cfg.stride):
        raise ValueError("tracker template/search/stride settings disagree with the model")
    img = template_image.data if isinstance(template_image, Tensor) else np.asarray(template_image)
    s_z = context_size(gt.width, gt.height, hyper.context)
    crop = crop_and_resize(img, gt.center, s_z, hyper.template_size)
    feat = model.features(crop)
    return TrackerState(model=model, template_feat=feat, prev_center=gt.center,
                        prev_size=(gt.width, gt.height), hyper=hyper, frame_index=0,
                        init_size=(gt.width, gt.height))


def search_scale(state):
    """Pixels-to-crop factor used for the next search crop (crop px per image px)."""
    hyper = state.hyper
    if hyper.crop_scale == "initial" and state.init_size is not None:
        s_z = context_size(*state.init_size, hyper.context)
    else:
        s_z = context_size(*state.prev_size, hyper.context)
    return hyper.template_size / s_z


def track_frame(state, search_image):
    """Locate the target in one frame. Returns (box, updated state)."""
    hyper, model = state.hyper, state.model
    img = search_image.data if isinstance(search_image, Tensor) else np.asarray(search_image)
    pw, ph = state.prev_size
    scale_z = search_scale(state)
    s_x = hyper.search_size / scale_z
    crop = crop_and_resize(img, state.prev_center, s_x, hyper.search_size)

    fused = model.fuse(model.features(crop), state.template_feat)
    pred = decode_predictions(model.head(fused.response))

    size = pred.cls.shape[0]
    xs, ys = search_grid(size, hyper.stride, hyper.search_size)
    X, Y = np.meshgrid(xs, ys)
    boxes = np.stack([X - pred.l, Y - pred.t, X + pred.r, Y + pred.b])
    pen = penalty_map(pred.l + pred.r, pred.t + pred.b, pw * scale_z, ph * scale_z, hyper.penalty_k)
    q = select_query(pred.cls, pred.cen, pen, cosine_window(size), hyper.lambda_d)
    box = topk_average(q, pred.cls * pen, boxes, hyper.n_neighbors, hyper.top_k)

    half = hyper.search_size / 2.0
    cx = state.prev_center[0] + ((box.x0 + box.x1) / 2.0 - half) / scale_z
    cy = state.prev_center[1] + ((box.y0 + box.y1) / 2.0 - half) / scale_z
    g = hyper.gamma
    new_w = (1.0 - g) * pw + g * box.width / scale_z
    new_h = (1.0 - g) * ph + g * box.height / scale_z

    H, W = img.shape[1], img.shape[2]
    cx = min(max(cx, 0.0), float(W))
    cy = min(max(cy, 0.0), float(H))
    new_w = min(max(new_w, hyper.min_size), float(W))
    new_h = min(max(new_h, hyper.min_size), float(H))

    out = BBox.from_center(cx, cy, new_w, new_h)
    return out, replace(state, prev_center=(cx, cy), prev_size=(new_w, new_h),
                        frame_index=state.frame_index + 1)
