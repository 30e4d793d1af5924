"""One-pass evaluation metrics: IoU, AO, success rate, success AUC, precision.

Conventions:

* ``success_rate`` (the SR_0.5 / SR_0.75 scalars) counts IoU strictly above
  the threshold.
* The success curve counts IoU >= threshold, except that a frame with zero
  overlap never counts as a success. All-perfect tracking therefore scores an
  AUC of 1 and all-lost tracking an AUC of 0.
* Precision counts centre errors <= the pixel threshold (20 px by default).
"""
import math
from dataclasses import dataclass, field

import numpy as np

SUCCESS_THRESHOLDS = np.arange(101) / 100.0
PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)
DEFAULT_PIXEL_THRESHOLD = 20.0


@dataclass
class SequenceResult:
    seq_id: str
    frames: list  # (predicted BBox, ground-truth BBox) pairs

    def __post_init__(self):
        if not self.frames:
            raise ValueError(f"sequence {self.seq_id!r} has no frames")
        for _, gt in self.frames:
            if not gt.is_valid():
                raise ValueError(f"sequence {self.seq_id!r}: ill-formed ground truth {gt}")


@dataclass
class MetricReport:
    ao: float
    sr: dict
    success_curve: np.ndarray
    precision_curve: np.ndarray
    auc: float
    precision: float
    fps: float = float("nan")
    num_frames: int = 0
    num_sequences: int = 0
    ao_per_sequence: dict = field(default_factory=dict)

    def to_kv(self):
        out = {
            "ao": f"{self.ao:.6f}",
            "success_auc": f"{self.auc:.6f}",
            f"precision_{DEFAULT_PIXEL_THRESHOLD:g}px": f"{self.precision:.6f}",
        }
        for thr, rate in sorted(self.sr.items()):
            out[f"sr_{thr:g}"] = f"{rate:.6f}"
        for seq, ao in sorted(self.ao_per_sequence.items()):
            out[f"ao.{seq}"] = f"{ao:.6f}"
        out["num_sequences"] = str(self.num_sequences)
        out["num_frames"] = str(self.num_frames)
        out["success_convention"] = "iou>=t and iou>0"
        out["sr_convention"] = "iou>t"
        return out


def iou(a, b):
    if not (a.is_valid() and b.is_valid()):
        return 0.0
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _mean(values):
    # correctly rounded, so the result does not depend on summation order
    values = list(values)
    return math.fsum(values) / len(values)


def _ious(results):
    return np.array([iou(p, g) for r in results for p, g in r.frames])


def center_errors(results):
    out = []
    for r in results:
        for p, g in r.frames:
            (px, py), (gx, gy) = p.center, g.center
            out.append(np.hypot(px - gx, py - gy))
    return np.array(out)


def average_overlap(results, per_sequence=False):
    """Mean IoU over every frame, or the mean of per-sequence means."""
    if not results:
        raise ValueError("no results")
    if per_sequence:
        return _mean(_mean(_ious([r])) for r in results)
    return _mean(_ious(results))


def success_rate(results, threshold):
    return float(np.mean(_ious(results) > threshold))


def success_curve(results, thresholds=SUCCESS_THRESHOLDS):
    ious = _ious(results)
    return np.array([np.mean((ious >= t) & (ious > 0)) for t in thresholds])


def success_auc(results):
    return _mean(success_curve(results))


def precision_at(results, pixel_threshold=DEFAULT_PIXEL_THRESHOLD):
    return float(np.mean(center_errors(results) <= pixel_threshold))


def precision_curve(results, thresholds=PRECISION_THRESHOLDS):
    err = center_errors(results)
    return np.array([np.mean(err <= t) for t in thresholds])


def evaluate_results(results, fps=float("nan"), thresholds=(0.5, 0.75)):
    curve = success_curve(results)
    return MetricReport(
        ao=average_overlap(results),
        sr={t: success_rate(results, t) for t in thresholds},
        success_curve=curve,
        precision_curve=precision_curve(results),
        auc=_mean(curve),
        precision=precision_at(results),
        fps=fps,
        num_frames=sum(len(r.frames) for r in results),
        num_sequences=len(results),
        ao_per_sequence={r.seq_id: average_overlap([r]) for r in results},
    )
