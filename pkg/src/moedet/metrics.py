"""Detection evaluation: IoU, greedy matching, precision/recall/F1,
all-point average precision with the monotone precision envelope, mAP
over IoU thresholds, confusion matrix, and the accuracy-latency
trade-off score.

Boxes are (cx, cy, w, h). Detections and ground truths carry an image id
so whole-split evaluation never matches across images; single-image use
just leaves the default id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

IOU_RANGE = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))  # 0.50 ... 0.95


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class GroundTruth:
    class_id: int
    box: tuple[float, float, float, float]
    image_id: int = 0


@dataclass(frozen=True)
class Detection:
    class_id: int
    confidence: float
    box: tuple[float, float, float, float]
    image_id: int = 0


@dataclass
class MatchResult:
    tp: dict[int, int]
    fp: dict[int, int]
    fn: dict[int, int]
    pairs: list[tuple[Detection, GroundTruth, float]]


@dataclass
class PRCurve:
    points: list[tuple[float, float]]  # (recall, precision) in confidence order
    ap: float


@dataclass(frozen=True)
class TradeoffParams:
    latency_alpha: float
    latency_ms: float
    reference_ms: float

    def __post_init__(self):
        if self.reference_ms <= 0:
            raise ValueError("reference latency must be positive")


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two (cx, cy, w, h) boxes; 0 when the
    union is empty."""
    ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2
    ax2, ay2 = a[0] + a[2] / 2, a[1] + a[3] / 2
    bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2
    bx2, by2 = b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        inter = 0.0
    else:
        inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    if union <= 0:
        return 0.0
    return inter / union


def match(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float
) -> MatchResult:
    """Greedy matching: per class (and per image), detections in descending
    confidence claim the unmatched ground truth with the highest IoU at or
    above the threshold. Unmatched detections are false positives,
    unmatched ground truths false negatives."""
    classes = {g.class_id for g in gts} | {d.class_id for d in dets}
    tp: dict[int, int] = {c: 0 for c in classes}
    fp: dict[int, int] = {c: 0 for c in classes}
    fn: dict[int, int] = {c: 0 for c in classes}
    pairs: list[tuple[Detection, GroundTruth, float]] = []

    for c in sorted(classes):
        class_gts = [g for g in gts if g.class_id == c]
        class_dets = sorted(
            (d for d in dets if d.class_id == c), key=lambda d: -d.confidence
        )
        claimed = [False] * len(class_gts)
        for det in class_dets:
            best, best_iou = -1, 0.0
            for gi, gt in enumerate(class_gts):
                if claimed[gi] or gt.image_id != det.image_id:
                    continue
                val = iou(det.box, gt.box)
                if val >= iou_threshold and val > best_iou:
                    best, best_iou = gi, val
            if best >= 0:
                claimed[best] = True
                tp[c] += 1
                pairs.append((det, class_gts[best], best_iou))
            else:
                fp[c] += 1
        fn[c] = claimed.count(False)
    return MatchResult(tp=tp, fp=fp, fn=fn, pairs=pairs)


def f1_from_precision_recall(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * recall * precision / (recall + precision)


def precision_recall_f1(m: MatchResult) -> dict[str, float]:
    """Aggregate counts over classes; 0/0 conventions map to 0."""
    tp = sum(m.tp.values())
    fp = sum(m.fp.values())
    fn = sum(m.fn.values())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1_from_precision_recall(precision, recall),
    }


def average_precision(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float
) -> PRCurve:
    """All-point interpolated AP for a single class pool.

    Sweeps every distinct detection confidence, accumulates (recall,
    precision) points, applies the monotone precision envelope, and sums
    (recall_i - recall_{i-1}) * precision_i.
    """
    n_gt = len(gts)
    if n_gt == 0:
        return PRCurve(points=[], ap=0.0)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    claimed: dict[int, bool] = {}
    gts_by_image: dict[int, list[int]] = {}
    for gi, g in enumerate(gts):
        gts_by_image.setdefault(g.image_id, []).append(gi)

    hits = []
    for di in order:
        det = dets[di]
        best, best_iou = -1, 0.0
        for gi in gts_by_image.get(det.image_id, ()):
            if claimed.get(gi):
                continue
            val = iou(det.box, gts[gi].box)
            if val >= iou_threshold and val > best_iou:
                best, best_iou = gi, val
        if best >= 0:
            claimed[best] = True
            hits.append(1)
        else:
            hits.append(0)

    points: list[tuple[float, float]] = []
    tp = fp = 0
    for rank, di in enumerate(order):
        tp += hits[rank]
        fp += 1 - hits[rank]
        next_conf = dets[order[rank + 1]].confidence if rank + 1 < len(order) else None
        if next_conf is not None and next_conf == dets[di].confidence:
            continue  # group tied confidences into one sweep point
        points.append((tp / n_gt, tp / (tp + fp)))

    ap = 0.0
    prev_recall = 0.0
    envelope = 0.0
    # envelope: precision at recall r is the max precision at recall >= r
    for i in range(len(points) - 1, -1, -1):
        envelope = max(envelope, points[i][1])
        points[i] = (points[i][0], envelope)
    for recall, precision in points:
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return PRCurve(points=points, ap=ap)


def map_at(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    thresholds: Sequence[float],
) -> dict:
    """Mean over classes (those with ground truth) of the mean over IoU
    thresholds of AP."""
    if not thresholds:
        raise ValueError("thresholds must be nonempty")
    classes = sorted({g.class_id for g in gts})
    if not classes:
        raise MetricsError("no classes with ground truth")
    per_class: dict[int, float] = {}
    table: dict[int, dict[float, float]] = {}
    for c in classes:
        c_dets = [d for d in dets if d.class_id == c]
        c_gts = [g for g in gts if g.class_id == c]
        aps = {t: average_precision(c_dets, c_gts, t).ap for t in thresholds}
        table[c] = aps
        per_class[c] = sum(aps.values()) / len(thresholds)
    return {
        "per_class": per_class,
        "per_class_per_threshold": table,
        "map": sum(per_class.values()) / len(classes),
    }


def tradeoff_score(map_value: float, params: TradeoffParams) -> float:
    """Accuracy minus the latency penalty alpha * T / T0."""
    return map_value - params.latency_alpha * params.latency_ms / params.reference_ms


def confusion_matrix(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    num_classes: int,
    iou_threshold: float = 0.5,
    conf_threshold: float = 0.25,
) -> np.ndarray:
    """(num_classes+1)^2 counts; the extra row/column is background.

    Matching here is class-agnostic (per image, by confidence) so class
    confusions land off the diagonal; rows index ground-truth class,
    columns detected class.
    """
    mat = np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64)
    bg = num_classes
    kept = [d for d in dets if d.confidence >= conf_threshold]
    order = sorted(range(len(kept)), key=lambda i: -kept[i].confidence)
    claimed = [False] * len(gts)
    matched_det = [False] * len(kept)
    for di in order:
        det = kept[di]
        best, best_iou = -1, 0.0
        for gi, gt in enumerate(gts):
            if claimed[gi] or gt.image_id != det.image_id:
                continue
            val = iou(det.box, gt.box)
            if val >= iou_threshold and val > best_iou:
                best, best_iou = gi, val
        if best >= 0:
            claimed[best] = True
            matched_det[di] = True
            mat[gts[best].class_id, det.class_id] += 1
    for gi, gt in enumerate(gts):
        if not claimed[gi]:
            mat[gt.class_id, bg] += 1
    for di, det in enumerate(kept):
        if not matched_det[di]:
            mat[bg, det.class_id] += 1
    return mat


def evaluation_report(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    num_classes: int,
    class_names: Sequence[str] | None = None,
    conf_threshold: float = 0.25,
    match_iou: float = 0.5,
) -> dict:
    """The JSON payload shape returned by the evaluation tool."""
    m = match([d for d in dets if d.confidence >= conf_threshold], gts, match_iou)
    prf = precision_recall_f1(m)
    map50 = map_at(dets, gts, [0.5])
    map5095 = map_at(dets, gts, IOU_RANGE)
    per_class = []
    for c in sorted({g.class_id for g in gts}):
        tp, fp, fn = m.tp.get(c, 0), m.fp.get(c, 0), m.fn.get(c, 0)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        per_class.append(
            {
                "class_id": c,
                "name": class_names[c] if class_names else str(c),
                "ap50": map50["per_class"][c],
                "ap5095": map5095["per_class"][c],
                "precision": p,
                "recall": r,
                "f1": f1_from_precision_recall(p, r),
            }
        )
    return {
        "map50": map50["map"],
        "map5095": map5095["map"],
        "precision": prf["precision"],
        "recall": prf["recall"],
        "f1": prf["f1"],
        "per_class": per_class,
        "confusion": confusion_matrix(
            dets, gts, num_classes, iou_threshold=match_iou, conf_threshold=conf_threshold
        ).tolist(),
    }
