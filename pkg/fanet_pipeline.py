#!/usr/bin/env python3
"""
FANet post-processing chain
Head fusion -> T-NMS on tubelets -> per-frame NMS + box voting -> beta filter
-> Viterbi tubes -> tubelet-guided merging -> tube rescoring
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Set, Tuple

import pandas as pd
from tqdm import tqdm

from errors import ConfigError, InvariantViolation, PreconditionError
from evaluation import GroundTruthBox, evaluate
from geometry import Detection, bbox_voting, nms
from head_fusion import combine_head_scores
from settings import PipelineConfig
from tube_linking import (LinkingConfig, Tube, build_tubes, check_tube, filter_by_beta,
                          group_by_frame, merge_tubes, rescore_tube)
from tubelets import Tubelet, build_tubelet_index, tubelet_nms_grouped

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    detections: List[Detection]
    tubes: List[Tube]
    metrics: Optional[Dict[str, float]] = None
    table: Optional[pd.DataFrame] = None
    stats: Dict[str, int] = field(default_factory=dict)


@dataclass
class _VideoTubelets:
    tubelets: List[Tubelet]
    index: Dict[str, Set[str]]


def apply_head_fusion(dets: Sequence[Detection], config: PipelineConfig) -> List[Detection]:
    """Replace score by the configured head combination where head scores exist"""
    fused = []
    for d in dets:
        has_spatial = bool(d.stage_scores)
        has_temporal = d.temporal_score is not None
        usable = {
            'spatial': has_spatial,
            'temporal': has_temporal,
            'double': has_spatial and has_temporal,
        }[config.head_mode]
        if not usable:
            fused.append(d)
            continue
        score = combine_head_scores(d.stage_scores, d.temporal_score, config.head_mode,
                                    config.use_cascade, config.fusion_order)
        fused.append(d.with_score(float(score[0])))
    return fused


def check_tubelet_lengths(tubelets: Sequence[Tubelet], n_frames: int) -> None:
    for t in tubelets:
        if t.length != n_frames:
            raise ConfigError(f"tubelet {t.uid} has {t.length} boxes but N = {n_frames}")


def suppress_frame(dets: Sequence[Detection], linking: LinkingConfig, voting: bool = True) -> List[Detection]:
    """Final per-frame NMS followed by bounding box voting"""
    kept, suppression = nms(dets, linking.nms_iou)
    if voting:
        kept = bbox_voting(kept, suppression, dets, linking.voting_iou)
    return kept


def link_partition(dets: Sequence[Detection], video: _VideoTubelets, config: PipelineConfig,
                   id_prefix: str, suppress: bool = True) -> Tuple[List[Detection], List[Tube]]:
    """Everything after head fusion for one (video, class) partition"""
    linking = config.linking()
    per_frame = group_by_frame(dets)
    survivors: List[Detection] = []
    for frame in sorted(per_frame):
        frame_dets = per_frame[frame]
        survivors.extend(suppress_frame(frame_dets, linking, config.voting) if suppress else frame_dets)

    filtered = filter_by_beta(survivors, linking.beta)
    if not config.link:
        return filtered, []

    tubes = build_tubes(group_by_frame(filtered), id_prefix=id_prefix)
    for t in tubes:
        check_tube(t, allow_gaps=False)
    if config.merge:
        tubes = merge_tubes(tubes, video.tubelets, video.index)
    if config.rescore:
        tubes = [rescore_tube(t, linking.alpha) for t in tubes]

    linked = sum(len(t) for t in tubes)
    if linked != len(filtered):
        raise InvariantViolation(f"{id_prefix}: {len(filtered)} detections in, {linked} in tubes")

    out: List[Detection] = []
    for t in tubes:
        check_tube(t, allow_gaps=True)
        for d, original in zip(t.detections, t.original_scores):
            extra = dict(d.extra)
            extra['orig_score'] = original
            extra['tube'] = t.uid
            out.append(replace(d, extra=extra))
    return out, tubes


def _partition(dets: Sequence[Detection]) -> Dict[Tuple[str, int], List[Detection]]:
    parts: Dict[Tuple[str, int], List[Detection]] = {}
    for d in dets:
        parts.setdefault((d.video_id, d.class_id), []).append(d)
    return parts


def _detection_key(d: Detection):
    return (d.video_id, d.frame, d.class_id, -d.score, d.uid)


def _tube_key(t: Tube):
    return (t.video_id, t.class_id, t.first.frame, t.uid)


def run_pipeline(detections: Sequence[Detection], tubelets: Sequence[Tubelet], config: PipelineConfig,
                 gts: Optional[Sequence[GroundTruthBox]] = None, suppress: bool = True,
                 tnms: bool = True, progress: bool = False) -> PipelineResult:
    """Run the whole chain per (video, class) and optionally evaluate

    suppress=False skips per-frame NMS/voting and tnms=False skips T-NMS, for
    inputs that were already suppressed upstream.
    """
    linking = config.validate().linking()
    check_tubelet_lengths(tubelets, linking.n_frames)
    uids = [d.uid for d in detections]
    if len(set(uids)) != len(uids):
        raise PreconditionError("detections need unique uids")

    dets = apply_head_fusion(detections, config)
    kept_tubelets = tubelet_nms_grouped(tubelets, config.effective_tnms_iou) if tnms else list(tubelets)
    logger.info("T-NMS kept %d of %d tubelets", len(kept_tubelets), len(tubelets))

    by_video: Dict[str, List[Tubelet]] = {}
    for t in kept_tubelets:
        by_video.setdefault(t.video_id, []).append(t)
    videos = {v: _VideoTubelets(ts, build_tubelet_index(ts)) for v, ts in by_video.items()}
    empty = _VideoTubelets([], {})

    parts = _partition(dets)
    keys = sorted(parts)

    def job(key):
        video_id, class_id = key
        return link_partition(parts[key], videos.get(video_id, empty), config,
                              f"{video_id}:c{class_id}:v", suppress)

    results: Dict[Tuple[str, int], Tuple[List[Detection], List[Tube]]] = {}
    with tqdm(total=len(keys), desc='linking', unit='part', disable=None if progress else True) as bar:
        if config.workers > 1 and len(keys) > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                for key, result in zip(keys, pool.map(job, keys)):
                    results[key] = result
                    bar.update(1)
        else:
            for key in keys:
                results[key] = job(key)
                bar.update(1)

    out_dets = sorted((d for key in keys for d in results[key][0]), key=_detection_key)
    out_tubes = sorted((t for key in keys for t in results[key][1]), key=_tube_key)
    stats = {
        'input_detections': len(detections),
        'input_tubelets': len(tubelets),
        'kept_tubelets': len(kept_tubelets),
        'partitions': len(keys),
        'output_detections': len(out_dets),
        'tubes': len(out_tubes),
    }
    logger.info("linked %d detections into %d tubes over %d partitions",
                len(out_dets), len(out_tubes), len(keys))

    result = PipelineResult(detections=out_dets, tubes=out_tubes, stats=stats)
    if gts is not None:
        result.table, result.metrics = evaluate(out_dets, gts, config.eval_ious)
    return result
