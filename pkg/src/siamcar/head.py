"""Classification / regression / center-ness head, training targets and losses."""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import entr, expit, log_softmax

from .tensor import ShapeError, Tensor, add, conv2d, exp, record_op, relu, scale

BRANCHES = (("cls", 2), ("reg", 4), ("cen", 1))


@dataclass
class HeadOutput:
    """Per-location maps. ``reg`` holds decoded (positive) l,t,r,b distances."""
    cls: Tensor
    reg: Tensor
    cen: Tensor

    @property
    def size(self):
        return self.cls.shape[1:]


@dataclass
class RegressionTarget:
    dists: Tensor  # 4×h×w: l, t, r, b
    mask: Tensor   # 1×h×w in {0, 1}


@dataclass
class LossBundle:
    cls_loss: Tensor
    cen_loss: Tensor
    reg_loss: Tensor
    total: Tensor
    lambda1: float
    lambda2: float
    empty_foreground: bool = False
    # mean binary entropy of the center-ness targets; cen_loss + cen_entropy is
    # the plain cross-entropy value
    cen_entropy: float = 0.0

    def values(self):
        return {
            "total": self.total.item(),
            "cls": self.cls_loss.item(),
            "cen": self.cen_loss.item(),
            "reg": self.reg_loss.item(),
        }


def head_param_shapes(in_channels, tower_channels, depth=2):
    shapes = {}
    for branch, out_ch in BRANCHES:
        prev = in_channels
        for d in range(depth):
            shapes[f"head.{branch}.tower{d}.w"] = (tower_channels, prev, 3, 3)
            shapes[f"head.{branch}.tower{d}.b"] = (tower_channels,)
            prev = tower_channels
        shapes[f"head.{branch}.proj.w"] = (out_ch, prev, 1, 1)
        shapes[f"head.{branch}.proj.b"] = (out_ch,)
    return shapes


def _branch(x, weights, branch):
    d = 0
    while f"head.{branch}.tower{d}.w" in weights:
        x = relu(conv2d(x, weights[f"head.{branch}.tower{d}.w"], weights[f"head.{branch}.tower{d}.b"],
                        stride=1, padding=1))
        d += 1
    return conv2d(x, weights[f"head.{branch}.proj.w"], weights[f"head.{branch}.proj.b"])


def head_forward(response, weights):
    """Run the three branches on the reduced response map."""
    for branch, out_ch in BRANCHES:
        key = f"head.{branch}.proj.w"
        if key not in weights:
            raise ShapeError(f"missing head weight {key}")
        if weights[key].shape[0] != out_ch:
            raise ShapeError(f"{key}: {branch} branch must emit {out_ch} channels")
    cls = _branch(response, weights, "cls")
    reg = exp(_branch(response, weights, "reg"))
    cen = _branch(response, weights, "cen")
    return HeadOutput(cls=cls, reg=reg, cen=cen)


# ----------------------------------------------------------------------------
# targets

def encode_targets(gt, grid):
    """Distances from every grid location to the four sides of ``gt``.

    ``grid`` is ``(xs, ys)``: x coordinate of each column and y coordinate of
    each row, in search-region pixels.
    """
    if not gt.is_valid():
        raise ValueError(f"degenerate ground-truth box {gt}")
    xs, ys = (np.asarray(a, dtype=np.float64) for a in grid)
    h, w = ys.size, xs.size
    X = np.broadcast_to(xs[None, :], (h, w))
    Y = np.broadcast_to(ys[:, None], (h, w))
    dists = np.stack([X - gt.x0, Y - gt.y0, gt.x1 - X, gt.y1 - Y])
    mask = np.all(dists > 0, axis=0)[None].astype(np.float64)
    return RegressionTarget(dists=Tensor(dists), mask=Tensor(mask))


def decode_box(x, y, dists):
    """Invert the target encoding at location (x, y): returns (x0, y0, x1, y1)."""
    l, t, r, b = dists
    return (x - l, y - t, x + r, y + b)


def centerness_score(target):
    d = target.dists.data
    m = target.mask.data[0] > 0
    l, t, r, b = d
    out = np.zeros(m.shape)
    lr = np.minimum(l[m], r[m]) / np.maximum(l[m], r[m])
    tb = np.minimum(t[m], b[m]) / np.maximum(t[m], b[m])
    out[m] = np.sqrt(lr * tb)
    return Tensor(out[None])


# ----------------------------------------------------------------------------
# losses

def _iou_and_grad(p, g):
    """IoU of distance boxes around a shared point plus d(-ln IoU)/dp.

    ``p``, ``g``: arrays of shape (4, ...) holding l, t, r, b.
    """
    lp, tp, rp, bp = p
    lg, tg, rg, bg = g
    wi = np.minimum(lp, lg) + np.minimum(rp, rg)
    hi = np.minimum(tp, tg) + np.minimum(bp, bg)
    inter = wi * hi
    area_p = (lp + rp) * (tp + bp)
    area_g = (lg + rg) * (tg + bg)
    union = area_p + area_g - inter
    iou = inter / union
    # subgradient of min() at ties taken from the target side (zero)
    dI = np.stack([hi * (lp < lg), wi * (tp < tg), hi * (rp < rg), wi * (bp < bg)])
    dA = np.stack([tp + bp, lp + rp, tp + bp, lp + rp])
    grad = -dI / inter + (dA - dI) / union
    return iou, grad


def iou_loss(pred, target):
    """-ln(IoU) between two (l, t, r, b) boxes anchored at the same location."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(target, dtype=np.float64)
    if p.shape != (4,) or g.shape != (4,):
        raise ShapeError("iou_loss takes two 4-vectors")
    if np.any(p <= 0) or np.any(g <= 0):
        raise ValueError("iou_loss needs strictly positive distances")
    iou, _ = _iou_and_grad(p, g)
    return -math.log(float(iou))


def cls_cross_entropy(logits, labels):
    """Mean two-class cross-entropy over every location of a 2×h×w map."""
    z = logits.data
    lab = labels.astype(bool)
    logp = log_softmax(z, axis=0)
    n = lab.size
    picked = np.where(lab, logp[1], logp[0])
    loss = -picked.sum() / n

    def backward(gout):
        p = np.exp(logp)
        onehot = np.stack([~lab, lab]).astype(np.float64)
        return ((p - onehot) * (float(gout) / n),)

    return record_op(np.array(loss), (logits,), backward, "cls_cross_entropy")


def masked_centerness_loss(cen_logits, cen_gt, mask):
    """Masked-mean binary cross-entropy on sigmoid(logit) vs. the center-ness target,
    reported net of the target entropy (so a perfect prediction scores 0)."""
    m = mask.astype(bool)
    n = int(m.sum())
    z = cen_logits.data[0][m]
    c = cen_gt[m]
    ent = (entr(c) + entr(1.0 - c)).sum() / n
    bce = (np.logaddexp(0.0, z) - c * z).sum() / n
    # non-negative up to rounding; clip the rounding
    loss = max(bce - ent, 0.0)

    def backward(gout):
        g = np.zeros_like(cen_logits.data)
        g[0][m] = (expit(z) - c) * (float(gout) / n)
        return (g,)

    return record_op(np.array(loss), (cen_logits,), backward, "centerness_loss"), float(ent)


def masked_iou_loss(reg, target_dists, mask):
    """Masked mean of -ln IoU over foreground locations."""
    m = mask.astype(bool)
    n = int(m.sum())
    p = reg.data[:, m]
    g = target_dists[:, m]
    iou, grad = _iou_and_grad(p, g)
    loss = -np.log(iou).sum() / n

    def backward(gout):
        out = np.zeros_like(reg.data)
        out[:, m] = grad * (float(gout) / n)
        return (out,)

    return record_op(np.array(loss), (reg,), backward, "iou_loss")


def total_loss(out, target, cen_gt, lambda1=1.0, lambda2=3.0):
    """Classification + lambda1 * center-ness + lambda2 * IoU regression."""
    hw = out.cls.shape[1:]
    if out.reg.shape[1:] != hw or out.cen.shape[1:] != hw or target.dists.shape[1:] != hw \
            or target.mask.shape[1:] != hw or cen_gt.shape[1:] != hw:
        raise ShapeError("head output, targets and center-ness map must share h×w")
    if np.any(out.reg.data <= 0):
        raise ValueError("regression distances must be positive")
    mask = target.mask.data[0]
    cls_loss = cls_cross_entropy(out.cls, mask)
    empty = not np.any(mask > 0)
    if empty:
        cen_loss, reg_loss, ent = Tensor(0.0), Tensor(0.0), 0.0
    else:
        cen_loss, ent = masked_centerness_loss(out.cen, cen_gt.data[0], mask)
        reg_loss = masked_iou_loss(out.reg, target.dists.data, mask)
    total = add(add(cls_loss, scale(cen_loss, lambda1)), scale(reg_loss, lambda2))
    return LossBundle(cls_loss=cls_loss, cen_loss=cen_loss, reg_loss=reg_loss, total=total,
                      lambda1=lambda1, lambda2=lambda2, empty_foreground=empty, cen_entropy=ent)
