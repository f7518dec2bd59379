"""Weighted boxes fusion of branch outputs and detection loss against ground truth."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .types import DetectionSet


@dataclass(frozen=True)
class FusionParams:
    iou_threshold: float = 0.55
    confidence_floor: float = 0.0
    cluster_conf_mode: str = "mean"

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if not 0.0 <= self.confidence_floor < 1.0:
            raise ValueError("confidence_floor must lie in [0, 1)")
        if self.cluster_conf_mode not in ("mean", "weighted"):
            raise ValueError(f"unknown cluster_conf_mode {self.cluster_conf_mode!r}")


@dataclass(frozen=True)
class LossParams:
    match_iou: float = 0.5
    miss_penalty: float = 1.0
    false_positive_factor: float = 0.5
    min_confidence: float = 1e-6  # clamp before log


@dataclass(frozen=True)
class LossBreakdown:
    cls_loss: float
    loc_loss: float

    @property
    def total(self) -> float:
        return self.cls_loss + self.loc_loss


def iou(a, b) -> float:
    """Intersection over union of two corner-format boxes."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0 else 0.0


def iou_matrix(a, b) -> np.ndarray:
    return _kernels.iou_matrix(a, b)


def _canonical_order(boxes, scores, labels):
    # lexsort: last key is primary
    return np.lexsort((boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], -scores, labels))


def weighted_boxes_fusion(detection_lists: Sequence[DetectionSet], params: FusionParams = FusionParams()) -> DetectionSet:
    """Fuse per-branch detections into one set.

    Boxes of the same class are visited in canonical order (descending
    confidence, then coordinates) and join the existing cluster whose fused
    box overlaps them most, provided that IoU exceeds ``params.iou_threshold``.
    Fused coordinates are the confidence-weighted mean of the cluster.
    """
    lists = [d for d in detection_lists if len(d)]
    if not lists:
        return DetectionSet()
    boxes = np.concatenate([d.boxes for d in lists])
    scores = np.concatenate([d.scores for d in lists])
    labels = np.concatenate([d.labels for d in lists])
    order = _canonical_order(boxes, scores, labels)
    fused, sw, count, flabels = _kernels.wbf_cluster(
        np.ascontiguousarray(boxes[order]), scores[order], labels[order], params.iou_threshold
    )
    conf = sw / count
    if params.cluster_conf_mode == "weighted":
        n_models = len(detection_lists)
        conf = conf * np.minimum(count, n_models) / n_models
    keep = conf >= params.confidence_floor
    fused, conf, flabels = fused[keep], conf[keep], flabels[keep]
    out_order = np.lexsort((flabels, fused[:, 3], fused[:, 2], fused[:, 1], fused[:, 0], -conf))
    return DetectionSet(fused[out_order], conf[out_order], flabels[out_order])


def _smooth_l1(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def detection_loss(pred: DetectionSet, gt: DetectionSet, params: LossParams = LossParams()) -> LossBreakdown:
    """Classification plus localization loss of ``pred`` against ``gt``.

    Predictions and ground truth are matched one-to-one, greedily by
    descending IoU, same class only, IoU >= ``params.match_iou``.
    ``cls_loss`` is the mean -log(confidence) of matched predictions plus
    ``miss_penalty`` per unmatched ground truth and ``false_positive_factor *
    confidence`` per unmatched prediction. ``loc_loss`` is the mean over
    matched pairs of the summed smooth-L1 corner errors, each normalized by
    the ground-truth width or height.
    """
    n, m = len(pred), len(gt)
    mp, mg = _kernels.greedy_match(pred.boxes, pred.labels, gt.boxes, gt.labels, params.match_iou)
    k = len(mp)
    cls = 0.0
    loc = 0.0
    if k:
        conf = np.maximum(pred.scores[mp], params.min_confidence)
        cls = float(np.mean(-np.log(conf)))
        g = gt.boxes[mg]
        w, h = g[:, 2] - g[:, 0], g[:, 3] - g[:, 1]
        size = np.stack([w, h, w, h], axis=1)
        diff = (pred.boxes[mp] - g) / size
        loc = float(np.mean(_smooth_l1(diff).sum(axis=1)))
    cls += params.miss_penalty * (m - k)
    if n > k:
        unmatched = np.ones(n, np.bool_)
        unmatched[mp] = False
        cls += params.false_positive_factor * float(pred.scores[unmatched].sum())
    # -log(1.0) is -0.0
    return LossBreakdown(cls + 0.0, loc + 0.0)


def pack_detections(lists: Sequence[DetectionSet]) -> tuple:
    """Concatenate per-branch sets in canonical order, tagging each row with its branch index."""
    if not lists:
        return np.zeros((0, 4)), np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64)
    boxes = np.concatenate([d.boxes for d in lists])
    scores = np.concatenate([d.scores for d in lists])
    labels = np.concatenate([d.labels for d in lists])
    branch = np.concatenate([np.full(len(d), i, np.int64) for i, d in enumerate(lists)])
    order = _canonical_order(boxes, scores, labels)
    return np.ascontiguousarray(boxes[order]), scores[order], labels[order], branch[order]


def batch_config_losses(
    lists: Sequence[DetectionSet],
    masks: np.ndarray,
    gt: DetectionSet,
    fusion: FusionParams = FusionParams(),
    loss: LossParams = LossParams(),
    use_numba: bool | None = None,
) -> np.ndarray:
    """Total loss of every configuration in one pass.

    ``masks[c, b]`` is true when branch ``b`` (an index into ``lists``) is a
    member of configuration ``c``.
    """
    masks = np.ascontiguousarray(masks, dtype=np.bool_)
    use = _kernels.USE_NUMBA if use_numba is None else (use_numba and _kernels.HAVE_NUMBA)
    if use:
        return _kernels.config_losses(pack_detections(lists), masks, gt.boxes, gt.labels, fusion, loss)
    out = np.empty(len(masks))
    for c, row in enumerate(masks):
        fused = weighted_boxes_fusion([lists[b] for b in np.flatnonzero(row)], fusion)
        out[c] = detection_loss(fused, gt, loss).total
    return out

