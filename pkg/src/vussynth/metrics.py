"""Detection / segmentation scoring: IoU, max-IoU matching, AP and state match rate."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Detection:
    bbox: tuple                         # (x, y, w, h)
    confidence: float = 1.0
    mask: Optional[np.ndarray] = None
    state: Optional[tuple] = None
    image: str = ""
    category: str = "vehicle"

    def __post_init__(self):
        _check_box(self.bbox)
        if not np.isfinite(self.confidence):
            raise MetricError("confidence must be finite")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    bbox: tuple
    state: tuple = ()
    mask: Optional[np.ndarray] = None
    image: str = ""
    category: str = "vehicle"

    def __post_init__(self):
        _check_box(self.bbox)


def _check_box(b):
    if len(b) != 4 or not b[2] > 0 or not b[3] > 0:
        raise MetricError(f"box {b!r} needs positive width and height")


def box_iou(a, b) -> float:
    _check_box(a)
    _check_box(b)
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise MetricError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def iou(a, b) -> float:
    """IoU of two (x, y, w, h) boxes or two boolean masks of equal shape."""
    a_mask, b_mask = isinstance(a, np.ndarray) and a.ndim == 2, isinstance(b, np.ndarray) and b.ndim == 2
    if a_mask != b_mask:
        raise MetricError("cannot compare a box with a mask")
    if a_mask:
        return mask_iou(a.astype(bool), b.astype(bool))
    _check_box(a)
    _check_box(b)
    return box_iou(a, b)


def _region(x, kind: str):
    if kind == "bbox":
        return x.bbox
    if x.mask is None:
        raise MetricError("mask IoU requested but a record has no mask")
    return x.mask


def match_max_iou(gts, dets, kind: str = "bbox") -> list:
    """Best IoU over all same-image detections for every ground truth (non-exclusive)."""
    by_image = defaultdict(list)
    for d in dets:
        by_image[d.image].append(d)
    return [max((iou(_region(g, kind), _region(d, kind)) for d in by_image[g.image]), default=0.0)
            for g in gts]


def match_detections(gts, dets, iou_threshold: float = 0.5, kind: str = "bbox"):
    """Greedy one-to-one matching in descending confidence.

    Each detection takes the still-unmatched same-image ground truth of highest
    IoU at or above the threshold. Returns ``(order, tp, pairs)``: detection
    indices in processing order, a TP flag per processed detection and
    ``(gt_index, det_index)`` pairs.
    """
    if not 0 < iou_threshold <= 1:
        raise MetricError("iou_threshold must lie in (0, 1]")
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    gt_by_image = defaultdict(list)
    for gi, g in enumerate(gts):
        gt_by_image[g.image].append(gi)
    taken = set()
    tp, pairs = [], []
    for di in order:
        d = dets[di]
        best, best_iou = None, -1.0
        for gi in gt_by_image[d.image]:
            if gi in taken:
                continue
            v = iou(_region(gts[gi], kind), _region(d, kind))
            if v >= iou_threshold and v > best_iou:
                best, best_iou = gi, v
        if best is None:
            tp.append(False)
        else:
            taken.add(best)
            tp.append(True)
            pairs.append((best, di))
    return order, tp, pairs


def average_precision(gts, dets, iou_threshold: float = 0.5, kind: str = "bbox") -> Optional[float]:
    """All-point interpolated AP for one class; None when there are neither GTs nor detections."""
    if not gts:
        return None if not dets else 0.0
    _, tp, _ = match_detections(gts, dets, iou_threshold, kind)
    if not tp:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    recall = ctp / len(gts)
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))


def mean_average_precision(gts, dets, iou_threshold: float = 0.5, kind: str = "bbox") -> Optional[float]:
    cats = sorted({g.category for g in gts} | {d.category for d in dets})
    aps = [average_precision([g for g in gts if g.category == c],
                             [d for d in dets if d.category == c], iou_threshold, kind)
           for c in cats]
    aps = [a for a in aps if a is not None]
    return float(np.mean(aps)) if aps else None


def state_match_rate(gt_states, pred_states) -> float:
    """Fraction of agreeing bits over all pre-matched (gt, prediction) state-vector pairs."""
    if len(gt_states) != len(pred_states):
        raise MetricError(f"{len(gt_states)} ground-truth states vs {len(pred_states)} predictions")
    if not gt_states:
        raise MetricError("no state pairs to compare")
    g = np.asarray(gt_states, dtype=bool)
    p = np.asarray(pred_states, dtype=bool)
    if g.shape != p.shape:
        raise MetricError(f"state vector shapes differ: {g.shape} vs {p.shape}")
    return float(np.mean(g == p))
