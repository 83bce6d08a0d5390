#!/usr/bin/env python3
"""
Box arithmetic for the FANet post-processing chain
Corner-form boxes, IoU, per-frame NMS that records which detections each
keeper absorbed, and score-weighted bounding box voting
"""

import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from errors import InvalidGeometryError, PreconditionError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel corner coordinates (x1, y1, x2, y2)"""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        values = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in values):
            raise InvalidGeometryError(f"non-finite box coordinates {values}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise InvalidGeometryError(f"negative box extent {values}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> 'BBox':
        if len(values) != 4:
            raise InvalidGeometryError(f"box needs 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))

    @classmethod
    def from_center(cls, x: float, y: float, w: float, h: float) -> 'BBox':
        return center_to_corners((x, y, w, h))

    def to_center(self) -> Tuple[float, float, float, float]:
        return corners_to_center(self)


def center_to_corners(center_form: Sequence[float]) -> BBox:
    """Convert (x, y, w, h) with (x, y) the box center into a corner-form BBox"""
    x, y, w, h = (float(v) for v in center_form)
    if w < 0 or h < 0:
        raise InvalidGeometryError(f"negative width/height in {tuple(center_form)}")
    return BBox(x - w / 2.0, y - h / 2.0, x + w / 2.0, y + h / 2.0)


def corners_to_center(box: BBox) -> Tuple[float, float, float, float]:
    """Inverse of center_to_corners"""
    w = box.x2 - box.x1
    h = box.y2 - box.y1
    return (box.x1 + w / 2.0, box.y1 + h / 2.0, w, h)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, 0 when the union is empty"""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two (K, 4) corner arrays -> (Ka, Kb)"""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    xx1 = np.maximum(a[:, None, 0], b[None, :, 0])
    yy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    xx2 = np.minimum(a[:, None, 2], b[None, :, 2])
    yy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.maximum(0.0, xx2 - xx1) * np.maximum(0.0, yy2 - yy1)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide='ignore', invalid='ignore'):
        out = np.where(union > 0, inter / union, 0.0)
    return out


@dataclass(frozen=True, eq=False)
class Detection:
    """One per-frame detection with its proposal provenance

    source_proposal_ids starts as the detection's own proposal and grows with
    every detection NMS suppresses under it.
    listed_proposals keeps an ingested "proposals" list as written.
    """

    box: BBox
    class_id: int
    score: float
    frame: int
    source_proposal_ids: FrozenSet[str] = frozenset()
    video_id: str = ''
    uid: str = ''
    proposal: Optional[str] = None
    stage_scores: Optional[Tuple[float, ...]] = None
    temporal_score: Optional[float] = None
    listed_proposals: Optional[Tuple[str, ...]] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise PreconditionError(f"detection score {self.score} outside [0, 1]")
        if self.frame < 0:
            raise PreconditionError(f"negative frame index {self.frame}")

    def with_score(self, score: float) -> 'Detection':
        return replace(self, score=score)

    def with_box(self, box: BBox) -> 'Detection':
        return replace(self, box=box)


def _check_single_partition(dets: Sequence[Detection]) -> None:
    if not dets:
        return
    frame = dets[0].frame
    class_id = dets[0].class_id
    video = dets[0].video_id
    for d in dets:
        if d.frame != frame or d.class_id != class_id or d.video_id != video:
            raise PreconditionError(
                "nms input must share one video, frame and class "
                f"(got frame {d.frame}/class {d.class_id} with frame {frame}/class {class_id})")


def nms(dets: Sequence[Detection], iou_thresh: float) -> Tuple[List[Detection], Dict[str, List[str]]]:
    """Greedy descending-score NMS that keeps suppression provenance

    Returns the kept detections (highest score first) and a mapping from each
    keeper's uid to the uids it suppressed. Keepers absorb the
    source_proposal_ids of everything they suppress. Equal scores keep the
    lower input index first.
    """
    if not 0.0 <= iou_thresh <= 1.0:
        raise PreconditionError(f"iou_thresh {iou_thresh} outside [0, 1]")
    _check_single_partition(dets)
    uids = [d.uid for d in dets]
    if len(set(uids)) != len(uids):
        raise PreconditionError("nms input detections need unique uids")

    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    boxes = np.array([d.box.as_list() for d in dets], dtype=np.float64).reshape(-1, 4)
    overlaps = iou_matrix(boxes, boxes)
    assigned = [False] * len(dets)
    kept: List[Detection] = []
    suppression: Dict[str, List[str]] = {}

    for pos, i in enumerate(order):
        if assigned[i]:
            continue
        assigned[i] = True
        keeper = dets[i]
        absorbed: List[str] = []
        sources = set(keeper.source_proposal_ids)
        for j in order[pos + 1:]:
            if assigned[j]:
                continue
            if overlaps[i, j] > iou_thresh:
                assigned[j] = True
                absorbed.append(dets[j].uid)
                sources.update(dets[j].source_proposal_ids)
        suppression[keeper.uid] = absorbed
        kept.append(replace(keeper, source_proposal_ids=frozenset(sources)))

    return kept, suppression


def bbox_voting(kept: Sequence[Detection], suppression: Dict[str, List[str]],
                all_dets: Sequence[Detection], voting_iou: float = 0.5) -> List[Detection]:
    """Replace each kept box by the score-weighted mean of itself and the
    suppressed boxes overlapping it by at least voting_iou"""
    by_uid = {d.uid: d for d in all_dets}
    voted: List[Detection] = []
    for keeper in kept:
        members = [keeper]
        for uid in suppression.get(keeper.uid, []):
            if uid not in by_uid:
                raise PreconditionError(f"suppressed detection {uid} missing from input set")
            other = by_uid[uid]
            if iou(keeper.box, other.box) >= voting_iou:
                members.append(other)

        weights = np.array([m.score for m in members], dtype=np.float64)
        if len(members) == 1 or weights.sum() <= 0:
            voted.append(keeper)
            continue
        coords = np.array([m.box.as_list() for m in members], dtype=np.float64)
        mean = np.average(coords, axis=0, weights=weights)
        voted.append(keeper.with_box(BBox(*(float(v) for v in mean))))
    return voted
