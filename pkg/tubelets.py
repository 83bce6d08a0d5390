#!/usr/bin/env python3
"""
Tubelet proposals: anchor cuboids, tubelet score and overlap, global
Tubelet-NMS and per-box pyramid level assignment
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import PreconditionError
from geometry import BBox, iou

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Tubelet:
    """N linked box proposals over frames [end_frame - N + 1, end_frame]"""

    uid: str
    video_id: str
    end_frame: int
    boxes: Tuple[BBox, ...]
    box_scores: Tuple[float, ...]
    box_ids: Tuple[str, ...]
    extra: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.boxes)
        if n < 1:
            raise PreconditionError(f"tubelet {self.uid} has no boxes")
        if len(self.box_scores) != n or len(self.box_ids) != n:
            raise PreconditionError(
                f"tubelet {self.uid}: {n} boxes, {len(self.box_scores)} scores, {len(self.box_ids)} ids")
        for s in self.box_scores:
            if not 0.0 <= s <= 1.0:
                raise PreconditionError(f"tubelet {self.uid}: box score {s} outside [0, 1]")

    @property
    def length(self) -> int:
        return len(self.boxes)

    @property
    def start_frame(self) -> int:
        return self.end_frame - len(self.boxes) + 1

    @property
    def frames(self) -> List[int]:
        return list(range(self.start_frame, self.end_frame + 1))


@dataclass(frozen=True)
class AnchorSpec:
    """Anchor grid: W x H cells, one anchor per (scale, ratio) pair per cell

    Ratios are height / width.
    """

    grid_w: int
    grid_h: int
    stride: float
    scales: Tuple[float, ...] = (128.0, 256.0, 512.0)
    ratios: Tuple[float, ...] = (0.5, 1.0, 2.0)

    @property
    def anchors_per_cell(self) -> int:
        return len(self.scales) * len(self.ratios)


def generate_anchor_cuboids(spec: AnchorSpec, num_frames: int, end_frame: Optional[int] = None,
                            video_id: str = '') -> List[Tubelet]:
    """Stack every anchor box of the grid N times into an anchor cuboid

    Cell (i, j) is centred at (stride * (i + 0.5), stride * (j + 0.5)), with i
    the column. Box scores start at 0.
    """
    if num_frames < 1:
        raise PreconditionError(f"num_frames must be >= 1, got {num_frames}")
    if spec.grid_w < 1 or spec.grid_h < 1 or spec.anchors_per_cell < 1:
        raise PreconditionError(
            f"anchor grid {spec.grid_w}x{spec.grid_h} with {spec.anchors_per_cell} anchors per cell")
    if any(s <= 0 for s in spec.scales) or any(r <= 0 for r in spec.ratios):
        raise PreconditionError("anchor scales and ratios must be strictly positive")
    if end_frame is None:
        end_frame = num_frames - 1

    cuboids: List[Tubelet] = []
    for j in range(spec.grid_h):
        for i in range(spec.grid_w):
            cx = spec.stride * (i + 0.5)
            cy = spec.stride * (j + 0.5)
            a = 0
            for scale in spec.scales:
                for ratio in spec.ratios:
                    w = scale / math.sqrt(ratio)
                    h = scale * math.sqrt(ratio)
                    box = BBox.from_center(cx, cy, w, h)
                    uid = f"anchor:{j}:{i}:{a}"
                    cuboids.append(Tubelet(
                        uid=uid,
                        video_id=video_id,
                        end_frame=end_frame,
                        boxes=(box,) * num_frames,
                        box_scores=(0.0,) * num_frames,
                        box_ids=tuple(f"{uid}:{k}" for k in range(num_frames)),
                    ))
                    a += 1
    return cuboids


def tubelet_score(t: Tubelet) -> float:
    """Mean of the per-box scores"""
    if not t.box_scores:
        raise PreconditionError(f"tubelet {t.uid} has no box scores")
    return float(sum(t.box_scores) / len(t.box_scores))


def _check_aligned(a: Tubelet, b: Tubelet) -> None:
    if a.length != b.length or a.end_frame != b.end_frame:
        raise PreconditionError(
            f"tubelets {a.uid} and {b.uid} cover different frames "
            f"({a.start_frame}-{a.end_frame} vs {b.start_frame}-{b.end_frame})")


def tubelet_overlap(a: Tubelet, b: Tubelet) -> float:
    """Mean per-frame IoU of two tubelets over the same frame range"""
    _check_aligned(a, b)
    return float(sum(iou(ba, bb) for ba, bb in zip(a.boxes, b.boxes)) / a.length)


def tubelet_nms(ts: Sequence[Tubelet], overlap_thresh: float) -> List[Tubelet]:
    """Global greedy T-NMS over one frame range

    Tubelets are visited by descending score (ties: lower uid first); a
    tubelet survives unless it overlaps an earlier survivor above the
    threshold.
    """
    if not 0.0 <= overlap_thresh <= 1.0:
        raise PreconditionError(f"overlap_thresh {overlap_thresh} outside [0, 1]")
    if not ts:
        return []
    for t in ts[1:]:
        _check_aligned(ts[0], t)

    ranked = sorted(ts, key=lambda t: (-tubelet_score(t), t.uid))
    survivors: List[Tubelet] = []
    for cand in ranked:
        if all(tubelet_overlap(s, cand) <= overlap_thresh for s in survivors):
            survivors.append(cand)
    logger.debug("T-NMS kept %d of %d tubelets ending at frame %d", len(survivors), len(ts), ts[0].end_frame)
    return survivors


def tubelet_nms_grouped(ts: Sequence[Tubelet], overlap_thresh: float) -> List[Tubelet]:
    """T-NMS applied independently per (video, frame range) group"""
    groups: Dict[Tuple[str, int, int], List[Tubelet]] = {}
    for t in ts:
        groups.setdefault((t.video_id, t.end_frame, t.length), []).append(t)
    survivors: List[Tubelet] = []
    for key in sorted(groups):
        survivors.extend(tubelet_nms(groups[key], overlap_thresh))
    return survivors


def unclamped_pyramid_level(b: BBox, k0: int = 4, canonical_size: float = 224.0) -> float:
    """k0 + log2(sqrt(area) / canonical_size) before flooring and clamping"""
    return k0 + math.log2(math.sqrt(b.area) / canonical_size)


def assign_pyramid_level(b: BBox, k0: int = 4, canonical_size: float = 224.0,
                         min_level: int = 2, max_level: int = 5) -> int:
    """FPN level for one box; zero-area boxes go to min_level"""
    if b.area <= 0:
        return min_level
    level = int(np.floor(unclamped_pyramid_level(b, k0, canonical_size)))
    return max(min_level, min(max_level, level))


def build_tubelet_index(ts: Sequence[Tubelet]) -> Dict[str, set]:
    """Map each proposal id to the uids of the tubelets containing it"""
    index: Dict[str, set] = {}
    for t in ts:
        for box_id in t.box_ids:
            index.setdefault(box_id, set()).add(t.uid)
    return index
