#!/usr/bin/env python3
"""
Long-term object linking
Per-class Viterbi tube construction, tubelet-guided fragment merging solved
as an assignment problem, and top-alpha tube rescoring
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from errors import InvariantViolation, PreconditionError
from geometry import Detection, iou
from tubelets import Tubelet, tubelet_score

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Tube:
    """Class-labelled detection sequence across frames

    detections are ordered by frame; original_scores keeps the pre-rescoring
    score of every entry, final_score is set by rescore_tube.
    """

    uid: str
    video_id: str
    class_id: int
    detections: Tuple[Detection, ...]
    original_scores: Tuple[float, ...]
    final_score: Optional[float] = None
    link_score: float = 0.0

    @property
    def frames(self) -> List[int]:
        return [d.frame for d in self.detections]

    @property
    def first(self) -> Detection:
        return self.detections[0]

    @property
    def last(self) -> Detection:
        return self.detections[-1]

    def __len__(self) -> int:
        return len(self.detections)


@dataclass(frozen=True)
class LinkingConfig:
    beta: float = 0.05
    alpha: float = 0.10
    nms_iou: float = 0.5
    voting_iou: float = 0.5
    n_frames: int = 6

    def __post_init__(self):
        for name in ('beta', 'alpha'):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise PreconditionError(f"{name} must be in (0, 1], got {value}")
        for name in ('nms_iou', 'voting_iou'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise PreconditionError(f"{name} must be in [0, 1], got {value}")
        if self.n_frames < 1:
            raise PreconditionError(f"n_frames must be >= 1, got {self.n_frames}")


def filter_by_beta(dets: Iterable[Detection], beta: float) -> List[Detection]:
    """Keep detections scoring at least beta, in input order"""
    if not 0.0 <= beta <= 1.0:
        raise PreconditionError(f"beta {beta} outside [0, 1]")
    return [d for d in dets if d.score >= beta]


def linking_score(a: Detection, b: Detection) -> float:
    """p_a + p_b + IoU(a, b) for same-class detections in different frames"""
    if a.class_id != b.class_id:
        raise PreconditionError(f"cannot link class {a.class_id} with class {b.class_id}")
    if a.frame == b.frame:
        raise PreconditionError(f"cannot link two detections of frame {a.frame}")
    return a.score + b.score + iou(a.box, b.box)


def _best_tube_ending_at(remaining: Mapping[int, List[Tuple[int, Detection]]], end: int,
                         first_frame: int) -> Tuple[List[Detection], float]:
    """Viterbi pass over the consecutive non-empty frames ending at `end`

    Predecessor ties prefer higher IoU with the successor, then the lower
    input index; end-detection ties prefer the lower input index.
    """
    start = end
    while start - 1 >= first_frame and remaining.get(start - 1):
        start -= 1

    best: Dict[int, List[float]] = {start: [0.0] * len(remaining[start])}
    back: Dict[int, List[int]] = {start: [-1] * len(remaining[start])}
    for t in range(start + 1, end + 1):
        prev = remaining[t - 1]
        cur = remaining[t]
        best[t] = []
        back[t] = []
        for _, d in cur:
            top_key = None
            top_k = -1
            for k, (prev_index, p) in enumerate(prev):
                overlap = iou(p.box, d.box)
                value = best[t - 1][k] + (p.score + d.score + overlap)
                key = (value, overlap, -prev_index)
                if top_key is None or key > top_key:
                    top_key = key
                    top_k = k
            best[t].append(top_key[0])
            back[t].append(top_k)

    end_k = max(range(len(remaining[end])),
                key=lambda k: (best[end][k], -remaining[end][k][0]))
    score = best[end][end_k]

    chain: List[Detection] = []
    k = end_k
    for t in range(end, start - 1, -1):
        chain.append(remaining[t][k][1])
        k = back[t][k]
    chain.reverse()
    return chain, score


def _make_tube(uid: str, chain: Sequence[Detection], link_score: float) -> Tube:
    head = chain[0]
    return Tube(
        uid=uid,
        video_id=head.video_id,
        class_id=head.class_id,
        detections=tuple(chain),
        original_scores=tuple(d.score for d in chain),
        link_score=link_score,
    )


def build_tubes(per_frame: Mapping[int, Sequence[Detection]], class_id: Optional[int] = None,
                id_prefix: str = 'tube') -> List[Tube]:
    """Extract tubes ending at the last frame first, then earlier frames

    Each extracted tube maximises the accumulated linking score among the
    detections still unused; its detections are then removed. Detections left
    in the first frame become length-1 tubes.
    """
    remaining: Dict[int, List[Tuple[int, Detection]]] = {}
    for frame, dets in per_frame.items():
        entries = []
        for index, d in enumerate(dets):
            if d.frame != frame:
                raise PreconditionError(f"detection {d.uid} of frame {d.frame} filed under frame {frame}")
            if class_id is not None and d.class_id != class_id:
                raise PreconditionError(f"detection {d.uid} is class {d.class_id}, expected {class_id}")
            entries.append((index, d))
        if entries:
            remaining[frame] = entries
    if not remaining:
        return []

    first_frame = min(remaining)
    last_frame = max(remaining)
    tubes: List[Tube] = []

    for end in range(last_frame, first_frame, -1):
        while remaining.get(end):
            chain, score = _best_tube_ending_at(remaining, end, first_frame)
            used = {id(d) for d in chain}
            for d in chain:
                remaining[d.frame] = [e for e in remaining[d.frame] if id(e[1]) not in used]
            tubes.append(_make_tube(f"{id_prefix}{len(tubes)}", chain, score))

    for _, d in remaining.get(first_frame, []):
        tubes.append(_make_tube(f"{id_prefix}{len(tubes)}", [d], 0.0))

    logger.debug("built %d tubes from frames %d-%d", len(tubes), first_frame, last_frame)
    return tubes


def group_by_frame(dets: Iterable[Detection]) -> Dict[int, List[Detection]]:
    per_frame: Dict[int, List[Detection]] = {}
    for d in dets:
        per_frame.setdefault(d.frame, []).append(d)
    return per_frame


def tubelets_for(index: Mapping[str, Set[str]], d: Detection) -> Set[str]:
    """Tubelet uids associated with a detection through its provenance"""
    found: Set[str] = set()
    for pid in d.source_proposal_ids:
        found.update(index.get(pid, ()))
    return found


def gamma(index: Mapping[str, Set[str]], d: Detection, t: Tubelet) -> bool:
    """True when one of the detection's proposals is a box of the tubelet"""
    return t.uid in tubelets_for(index, d)


def merge_cost_matrix(tubes: Sequence[Tube], tubelets: Sequence[Tubelet],
                      index: Mapping[str, Set[str]]) -> np.ndarray:
    """C[i, j] = best tubelet score linking the end of tube i to the start of tube j

    A tubelet qualifies when it holds the last detection of i and the first
    detection of j, and j starts strictly after i ends.
    """
    if tubes:
        video, class_id = tubes[0].video_id, tubes[0].class_id
        for t in tubes:
            if t.video_id != video or t.class_id != class_id:
                raise PreconditionError("merge_cost_matrix needs tubes of one video and class")

    scores = {t.uid: tubelet_score(t) for t in tubelets}
    heads = [{tau.uid for tau in tubelets if gamma(index, t.first, tau)} for t in tubes]
    tails = [{tau.uid for tau in tubelets if gamma(index, t.last, tau)} for t in tubes]

    n = len(tubes)
    cost = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        if not tails[i]:
            continue
        for j in range(n):
            if i == j or tubes[j].first.frame <= tubes[i].last.frame:
                continue
            shared = tails[i] & heads[j]
            if shared:
                cost[i, j] = max(scores[uid] for uid in shared)
    return cost


def solve_assignment(cost: np.ndarray) -> List[Tuple[int, int]]:
    """Maximum-score one-to-one matching; zero-score pairs are dropped"""
    matrix = np.asarray(cost, dtype=np.float64)
    if matrix.size == 0:
        return []
    if matrix.ndim != 2:
        raise PreconditionError(f"assignment needs a 2-D matrix, got shape {matrix.shape}")
    if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
        raise PreconditionError("assignment matrix must be finite and non-negative")

    rows, cols = linear_sum_assignment(np.where(matrix > 0, -matrix, 0.0))
    return sorted((int(i), int(j)) for i, j in zip(rows, cols) if matrix[i, j] > 0)


def merge_tubes(tubes: Sequence[Tube], tubelets: Sequence[Tubelet],
                index: Mapping[str, Set[str]]) -> List[Tube]:
    """Join fragments whose end and start share a tubelet

    Assignment pairs are edges end(i) -> start(j); edges are chained and
    every chain becomes one tube, possibly with frame gaps.
    """
    if len(tubes) < 2:
        return list(tubes)
    pairs = solve_assignment(merge_cost_matrix(tubes, tubelets, index))
    if not pairs:
        return list(tubes)

    next_of = dict(pairs)
    has_prev = {j for _, j in pairs}
    merged: List[Tube] = []
    visited = 0
    for head in range(len(tubes)):
        if head in has_prev:
            continue
        parts = [tubes[head]]
        k = head
        while k in next_of:
            k = next_of[k]
            parts.append(tubes[k])
        visited += len(parts)

        detections = tuple(d for p in parts for d in p.detections)
        frames = [d.frame for d in detections]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise InvariantViolation(f"merged tube {tubes[head].uid} has non-increasing frames {frames}")
        merged.append(Tube(
            uid=tubes[head].uid,
            video_id=tubes[head].video_id,
            class_id=tubes[head].class_id,
            detections=detections,
            original_scores=tuple(s for p in parts for s in p.original_scores),
            link_score=sum(p.link_score for p in parts),
        ))

    if visited != len(tubes):
        raise InvariantViolation(f"tube chains cover {visited} of {len(tubes)} tubes")
    logger.debug("merged %d tubes into %d", len(tubes), len(merged))
    return merged


def rescore_tube(t: Tube, alpha: float = 0.10) -> Tube:
    """Set every entry's score to the mean of the top ceil(alpha * m) originals"""
    if len(t.detections) == 0:
        raise PreconditionError(f"cannot rescore empty tube {t.uid}")
    if not 0.0 < alpha <= 1.0:
        raise PreconditionError(f"alpha must be in (0, 1], got {alpha}")

    m = len(t.original_scores)
    # 0.1 * 30 must give k = 3
    k = max(1, math.ceil(alpha * m - 1e-9))
    top = sorted(t.original_scores, reverse=True)[:k]
    # sum(top) / k can leave [top[-1], top[0]] by an ulp, e.g. three 0.1 scores
    mean = min(max(sum(top) / k, top[-1]), top[0])
    return replace(
        t,
        detections=tuple(d.with_score(mean) for d in t.detections),
        final_score=mean,
    )


def check_tube(t: Tube, allow_gaps: bool = True) -> None:
    """Raise InvariantViolation unless the tube is well formed"""
    if not t.detections:
        raise InvariantViolation(f"tube {t.uid} is empty")
    if len(t.original_scores) != len(t.detections):
        raise InvariantViolation(f"tube {t.uid}: score/detection count mismatch")
    frames = t.frames
    for a, b in zip(frames, frames[1:]):
        if b <= a:
            raise InvariantViolation(f"tube {t.uid}: frames not strictly increasing {frames}")
        if not allow_gaps and b != a + 1:
            raise InvariantViolation(f"tube {t.uid}: gap between frames {a} and {b}")
    for d in t.detections:
        if d.class_id != t.class_id:
            raise InvariantViolation(f"tube {t.uid}: detection of class {d.class_id}")
