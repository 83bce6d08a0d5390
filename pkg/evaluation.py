#!/usr/bin/env python3
"""
Frame-level detection evaluation
Greedy detection/ground-truth matching, all-point interpolated AP, mAP and
AP averaged over IoU thresholds 0.50:0.05:0.95
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import PreconditionError
from geometry import BBox, Detection, iou

logger = logging.getLogger(__name__)

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True, eq=False)
class GroundTruthBox:
    video_id: str
    frame: int
    class_id: int
    box: BBox
    track_id: str = ''
    extra: Dict[str, object] = field(default_factory=dict)


def _rank(dets: Sequence[Detection]) -> List[Detection]:
    """Descending score, stable on input order"""
    scores = np.array([d.score for d in dets], dtype=np.float64)
    order = np.argsort(-scores, kind='stable')
    return [dets[i] for i in order]


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruthBox],
                     iou_thresh: float = 0.5) -> List[Tuple[Detection, bool]]:
    """Label each detection TP/FP, visiting detections by descending score

    A detection takes the unmatched ground truth of its video and frame with
    the highest IoU >= iou_thresh (ties: lower ground-truth index).
    """
    classes = {d.class_id for d in dets} | {g.class_id for g in gts}
    if len(classes) > 1:
        raise PreconditionError(f"match_detections expects one class, got {sorted(classes)}")

    by_frame: Dict[Tuple[str, int], List[int]] = {}
    for gi, g in enumerate(gts):
        by_frame.setdefault((g.video_id, g.frame), []).append(gi)
    matched = [False] * len(gts)

    labels: List[Tuple[Detection, bool]] = []
    for d in _rank(dets):
        best_gi = -1
        best_iou = iou_thresh
        for gi in by_frame.get((d.video_id, d.frame), []):
            if matched[gi]:
                continue
            overlap = iou(d.box, gts[gi].box)
            if overlap > best_iou or (overlap == best_iou and best_gi < 0):
                best_iou = overlap
                best_gi = gi
        if best_gi >= 0:
            matched[best_gi] = True
        labels.append((d, best_gi >= 0))
    return labels


def average_precision(labels: Sequence[bool], num_gt: int) -> float:
    """Area under the all-point interpolated precision/recall curve"""
    if num_gt < 0:
        raise PreconditionError(f"num_gt must be >= 0, got {num_gt}")
    if num_gt == 0 or len(labels) == 0:
        return 0.0

    hits = np.asarray(labels, dtype=bool)
    tp = np.cumsum(hits).astype(np.float64)
    fp = np.cumsum(~hits).astype(np.float64)
    recall = tp / num_gt
    precision = tp / (tp + fp)

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_ap(per_class_ap: Mapping[int, float]) -> float:
    """Unweighted mean over classes"""
    if not per_class_ap:
        raise PreconditionError("mean_ap needs at least one class")
    return float(np.mean(list(per_class_ap.values())))


def _in_area_range(box: BBox, area_range: Optional[Tuple[float, float]]) -> bool:
    if area_range is None:
        return True
    lo, hi = area_range
    return lo <= box.area < hi


def per_class_ap(dets: Iterable[Detection], gts: Iterable[GroundTruthBox], iou_thresh: float = 0.5,
                 area_range: Optional[Tuple[float, float]] = None) -> Dict[int, float]:
    """AP for every class that has ground truth"""
    dets_by_class: Dict[int, List[Detection]] = {}
    for d in dets:
        if _in_area_range(d.box, area_range):
            dets_by_class.setdefault(d.class_id, []).append(d)
    gts_by_class: Dict[int, List[GroundTruthBox]] = {}
    for g in gts:
        if _in_area_range(g.box, area_range):
            gts_by_class.setdefault(g.class_id, []).append(g)

    result: Dict[int, float] = {}
    for class_id in sorted(gts_by_class):
        class_gts = gts_by_class[class_id]
        labels = match_detections(dets_by_class.get(class_id, []), class_gts, iou_thresh)
        result[class_id] = average_precision([hit for _, hit in labels], len(class_gts))
    return result


def ap_range(dets: Sequence[Detection], gts: Sequence[GroundTruthBox],
             thresholds: Sequence[float] = COCO_THRESHOLDS,
             area_range: Optional[Tuple[float, float]] = None) -> float:
    """mAP averaged over IoU thresholds (0.50:0.05:0.95 by default)"""
    if not thresholds:
        raise PreconditionError("ap_range needs at least one threshold")
    return float(np.mean([mean_ap(per_class_ap(dets, gts, t, area_range)) for t in thresholds]))


def evaluate(dets: Sequence[Detection], gts: Sequence[GroundTruthBox],
             thresholds: Sequence[float] = COCO_THRESHOLDS,
             area_range: Optional[Tuple[float, float]] = None) -> Tuple[pd.DataFrame, Dict[str, float]]:
    """Per-class AP table (one column per threshold) and mAP summary"""
    dets = list(dets)
    gts = list(gts)
    columns = {}
    for t in thresholds:
        columns[f"AP@{t:.2f}"] = per_class_ap(dets, gts, t, area_range)
    table = pd.DataFrame(columns)
    table.index.name = 'class'

    summary: Dict[str, float] = {}
    if table.empty:
        logger.warning("no ground truth in range; nothing to evaluate")
        return table, summary
    for name in table.columns:
        summary[f"m{name}"] = float(table[name].mean())
    key = 'mAP@[.50:.95]' if tuple(thresholds) == COCO_THRESHOLDS else 'mAP@mean'
    summary[key] = float(table.to_numpy().mean())
    return table, summary
