#!/usr/bin/env python3
"""
Deterministic synthetic scenarios standing in for the detector network
Ground-truth tracks, degraded per-frame detections and tubelet proposals,
all reproducible from one integer seed
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import PreconditionError
from evaluation import GroundTruthBox
from geometry import BBox, Detection
from jsonl_io import write_detections, write_ground_truth, write_tubelets
from temporal_pooling import FeatureMap
from tubelets import Tubelet

logger = logging.getLogger(__name__)

RNG_VERSION = 'pcg64-boxmuller/1'


class ScenarioRandom:
    """Seeded PCG64 stream; every draw is built from uniform doubles

    Normals use Box-Muller on two uniforms so the stream does not depend on
    numpy's distribution implementations.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def random(self) -> float:
        return float(self._gen.random())

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * self.random()

    def normal(self, mean: float = 0.0, sigma: float = 1.0) -> float:
        u1 = 1.0 - self.random()
        u2 = self.random()
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return mean + sigma * z

    def clipped_normal(self, mean: float, sigma: float, lo: float = 0.0, hi: float = 1.0) -> float:
        return min(hi, max(lo, self.normal(mean, sigma)))

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def integer(self, n: int) -> int:
        return min(n - 1, int(self.random() * n))

    def uniform_array(self, shape: Tuple[int, ...]) -> np.ndarray:
        return self._gen.random(shape)


def _as_rng(seed_or_rng: Union[int, ScenarioRandom]) -> ScenarioRandom:
    if isinstance(seed_or_rng, ScenarioRandom):
        return seed_or_rng
    return ScenarioRandom(seed_or_rng)


@dataclass(frozen=True)
class Track:
    track_id: str
    class_id: int
    boxes: Tuple[BBox, ...]  # boxes[f] is the box in frame f


@dataclass(frozen=True)
class MotionParams:
    image_size: Tuple[float, float] = (640.0, 480.0)
    min_size: float = 40.0
    max_size: float = 120.0
    max_speed: float = 4.0
    jitter: float = 0.0  # pixels, per-frame position noise
    num_classes: int = 3


@dataclass(frozen=True)
class NoiseParams:
    loc_sigma: float = 0.05  # relative to box width/height
    score_mean: float = 0.9
    score_sigma: float = 0.05
    fp_score_mean: float = 0.3
    fp_score_sigma: float = 0.1
    p_miss: float = 0.0
    fp_rate: float = 0.0  # expected false positives per frame
    p_confuse: float = 0.0
    duplicates: int = 0  # extra raw detections per detected box
    head_scores: bool = False

    def __post_init__(self):
        for name in ('p_miss', 'p_confuse'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise PreconditionError(f"{name} must be in [0, 1], got {value}")
        if self.fp_rate < 0 or self.duplicates < 0:
            raise PreconditionError("fp_rate and duplicates must be non-negative")
        if self.loc_sigma < 0 or self.score_sigma < 0 or self.fp_score_sigma < 0:
            raise PreconditionError("noise sigmas must be non-negative")

    @classmethod
    def clean(cls) -> 'NoiseParams':
        return cls(loc_sigma=0.0, score_mean=1.0, score_sigma=0.0, fp_score_mean=0.0,
                   fp_score_sigma=0.0, p_miss=0.0, fp_rate=0.0, p_confuse=0.0)


def _clamp_box(x1: float, y1: float, w: float, h: float, image_size: Optional[Tuple[float, float]]) -> BBox:
    """Shift a w x h box inside the image (size kept unless it does not fit)"""
    if image_size is not None:
        width, height = image_size
        w = min(w, width)
        h = min(h, height)
        x1 = min(max(x1, 0.0), width - w)
        y1 = min(max(y1, 0.0), height - h)
    return BBox(x1, y1, x1 + w, y1 + h)


def linear_track(track_id: str, class_id: int, start_box: BBox, velocity: Tuple[float, float],
                 num_frames: int, rng: Optional[ScenarioRandom] = None, jitter: float = 0.0,
                 image_size: Optional[Tuple[float, float]] = None) -> Track:
    """Constant-velocity track with optional Gaussian position jitter"""
    if num_frames < 1:
        raise PreconditionError(f"num_frames must be >= 1, got {num_frames}")
    vx, vy = velocity
    w, h = start_box.width, start_box.height
    boxes = []
    for t in range(num_frames):
        x1 = start_box.x1 + vx * t
        y1 = start_box.y1 + vy * t
        if jitter > 0 and rng is not None:
            x1 += rng.normal(0.0, jitter)
            y1 += rng.normal(0.0, jitter)
        boxes.append(_clamp_box(x1, y1, w, h, image_size))
    return Track(track_id=track_id, class_id=class_id, boxes=tuple(boxes))


def generate_tracks(seed_or_rng: Union[int, ScenarioRandom], n_tracks: int, num_frames: int,
                    motion: MotionParams = MotionParams()) -> List[Track]:
    """n_tracks random constant-velocity tracks over frames 0..num_frames-1"""
    if num_frames < 1 or n_tracks < 0:
        raise PreconditionError(f"need num_frames >= 1 and n_tracks >= 0 (got {num_frames}, {n_tracks})")
    rng = _as_rng(seed_or_rng)
    width, height = motion.image_size
    tracks = []
    for k in range(n_tracks):
        w = rng.uniform(motion.min_size, motion.max_size)
        h = rng.uniform(motion.min_size, motion.max_size)
        x1 = rng.uniform(0.0, max(0.0, width - w))
        y1 = rng.uniform(0.0, max(0.0, height - h))
        velocity = (rng.uniform(-motion.max_speed, motion.max_speed),
                    rng.uniform(-motion.max_speed, motion.max_speed))
        class_id = rng.integer(motion.num_classes)
        tracks.append(linear_track(f"trk{k}", class_id, BBox(x1, y1, x1 + w, y1 + h), velocity,
                                   num_frames, rng, motion.jitter, motion.image_size))
    return tracks


def _jitter_box(box: BBox, sigma: float, rng: ScenarioRandom,
                image_size: Optional[Tuple[float, float]]) -> BBox:
    """Corner-wise Gaussian noise scaled by the box size, clipped to the image"""
    w, h = box.width, box.height
    xs = sorted((box.x1 + rng.normal(0.0, sigma * w), box.x2 + rng.normal(0.0, sigma * w)))
    ys = sorted((box.y1 + rng.normal(0.0, sigma * h), box.y2 + rng.normal(0.0, sigma * h)))
    if image_size is not None:
        width, height = image_size
        xs = [min(max(v, 0.0), width) for v in xs]
        ys = [min(max(v, 0.0), height) for v in ys]
    return BBox(xs[0], ys[0], xs[1], ys[1])


def degrade(tracks: Sequence[Track], noise: NoiseParams, seed_or_rng: Union[int, ScenarioRandom],
            motion: MotionParams = MotionParams(), video_id: str = 'vid0') -> List[Detection]:
    """Turn ground-truth tracks into noisy per-frame network detections

    Per track box: dropped with p_miss, corners jittered by loc_sigma, class
    confused with p_confuse, score from a clipped normal. False positives
    appear at fp_rate per frame. True detections carry extra["track"], false
    positives extra["false_positive"].
    """
    rng = _as_rng(seed_or_rng)
    num_frames = max((len(t.boxes) for t in tracks), default=0)
    image_size = motion.image_size
    dets: List[Detection] = []

    def emit(box, class_id, score, frame, proposal, extra, head=None):
        stage_scores, temporal = head if head else (None, None)
        dets.append(Detection(
            box=box, class_id=class_id, score=score, frame=frame,
            source_proposal_ids=frozenset([proposal]), video_id=video_id,
            uid=f"{video_id}:d{len(dets)}", proposal=proposal,
            stage_scores=stage_scores, temporal_score=temporal, extra=extra))

    def head_scores(score):
        if not noise.head_scores:
            return None
        stages = tuple(rng.clipped_normal(score, noise.score_sigma) for _ in range(3))
        return stages, rng.clipped_normal(score, noise.score_sigma)

    fp_count = 0
    for frame in range(num_frames):
        for track in tracks:
            if frame >= len(track.boxes):
                continue
            if rng.bernoulli(noise.p_miss):
                continue
            box = _jitter_box(track.boxes[frame], noise.loc_sigma, rng, image_size)
            class_id = track.class_id
            if motion.num_classes > 1 and rng.bernoulli(noise.p_confuse):
                class_id = (class_id + 1 + rng.integer(motion.num_classes - 1)) % motion.num_classes
            score = rng.clipped_normal(noise.score_mean, noise.score_sigma)
            extra = {'track': track.track_id}
            emit(box, class_id, score, frame, f"{video_id}:{track.track_id}:f{frame}:p0",
                 extra, head_scores(score))
            for k in range(1, noise.duplicates + 1):
                dup_box = _jitter_box(box, max(noise.loc_sigma, 0.02), rng, image_size)
                dup_score = score * rng.uniform(0.6, 0.95)
                emit(dup_box, class_id, dup_score, frame, f"{video_id}:{track.track_id}:f{frame}:p{k}",
                     dict(extra), head_scores(dup_score))

        n_fp = int(noise.fp_rate)
        if rng.bernoulli(noise.fp_rate - n_fp):
            n_fp += 1
        for _ in range(n_fp):
            w = rng.uniform(motion.min_size, motion.max_size)
            h = rng.uniform(motion.min_size, motion.max_size)
            x1 = rng.uniform(0.0, max(0.0, image_size[0] - w))
            y1 = rng.uniform(0.0, max(0.0, image_size[1] - h))
            class_id = rng.integer(motion.num_classes)
            score = rng.clipped_normal(noise.fp_score_mean, noise.fp_score_sigma)
            emit(_clamp_box(x1, y1, w, h, image_size), class_id, score, frame,
                 f"{video_id}:fp{fp_count}", {'false_positive': True}, head_scores(score))
            fp_count += 1
    return dets


def derive_tubelets(tracks: Sequence[Track], detections: Sequence[Detection], n: int,
                    seed_or_rng: Union[int, ScenarioRandom], jitter: float = 0.02,
                    score_mean: float = 0.8, score_sigma: float = 0.05, duplicates: int = 0,
                    video_id: str = 'vid0',
                    image_size: Optional[Tuple[float, float]] = None) -> Tuple[List[Tubelet], List[Detection]]:
    """Sliding windows of length n over every track, like surviving RPN tubelets

    Windows also cover frames whose detection was dropped. Every box id of a
    window is added to the source_proposal_ids of the detections derived from
    that track in that frame.
    """
    if n < 1:
        raise PreconditionError(f"tubelet length must be >= 1, got {n}")
    rng = _as_rng(seed_or_rng)
    tubelets: List[Tubelet] = []
    covering: Dict[Tuple[str, int], List[str]] = {}

    for track in tracks:
        for end in range(n - 1, len(track.boxes)):
            frames = range(end - n + 1, end + 1)
            for copy in range(duplicates + 1):
                uid = f"{video_id}:{track.track_id}:e{end}" + (f":x{copy}" if copy else '')
                sigma = jitter if copy == 0 else 3.0 * max(jitter, 0.02)
                boxes = tuple(_jitter_box(track.boxes[f], sigma, rng, image_size) for f in frames)
                scores = [rng.clipped_normal(score_mean, score_sigma) for _ in frames]
                if copy:
                    decay = rng.uniform(0.5, 0.9)
                    scores = [s * decay for s in scores]
                box_ids = tuple(f"{uid}:f{f}" for f in frames)
                for f, box_id in zip(frames, box_ids):
                    covering.setdefault((track.track_id, f), []).append(box_id)
                tubelets.append(Tubelet(uid=uid, video_id=video_id, end_frame=end, boxes=boxes,
                                        box_scores=tuple(scores), box_ids=box_ids))

    wired: List[Detection] = []
    for d in detections:
        track_id = d.extra.get('track')
        ids = covering.get((track_id, d.frame)) if track_id is not None else None
        if ids:
            d = replace(d, source_proposal_ids=d.source_proposal_ids | frozenset(ids))
        wired.append(d)
    return tubelets, wired


def ground_truth_from_tracks(tracks: Sequence[Track], video_id: str = 'vid0') -> List[GroundTruthBox]:
    return [GroundTruthBox(video_id=video_id, frame=f, class_id=t.class_id, box=box, track_id=t.track_id)
            for t in tracks for f, box in enumerate(t.boxes)]


def synthetic_feature_pyramid(seed_or_rng: Union[int, ScenarioRandom], frames: Sequence[int],
                              image_size: Tuple[float, float] = (320.0, 240.0),
                              levels: Sequence[int] = (2, 3, 4, 5),
                              channels: int = 256) -> Dict[int, Dict[int, FeatureMap]]:
    """Seeded uniform feature maps, level l has stride 2**l"""
    rng = _as_rng(seed_or_rng)
    width, height = image_size
    pyramid: Dict[int, Dict[int, FeatureMap]] = {}
    for frame in sorted(set(frames)):
        pyramid[frame] = {}
        for level in levels:
            stride = float(2 ** level)
            shape = (max(1, math.ceil(height / stride)), max(1, math.ceil(width / stride)), channels)
            pyramid[frame][level] = FeatureMap(rng.uniform_array(shape).astype(np.float32), stride)
    return pyramid


@dataclass(frozen=True)
class ScenarioParams:
    n_videos: int = 1
    n_tracks: int = 10
    num_frames: int = 40
    tubelet_length: int = 6
    motion: MotionParams = MotionParams()
    noise: NoiseParams = NoiseParams()
    tubelet_jitter: float = 0.02
    tubelet_duplicates: int = 1


@dataclass
class Scenario:
    seed: int
    params: ScenarioParams
    tracks: Dict[str, List[Track]] = field(default_factory=dict)  # video -> tracks
    detections: List[Detection] = field(default_factory=list)
    tubelets: List[Tubelet] = field(default_factory=list)
    gt: List[GroundTruthBox] = field(default_factory=list)
    rng_version: str = RNG_VERSION

    def write(self, out_dir: str) -> Dict[str, str]:
        """Write detections.jsonl, tubelets.jsonl and ground_truth.jsonl plus scenario.json metadata"""
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            'detections': os.path.join(out_dir, 'detections.jsonl'),
            'tubelets': os.path.join(out_dir, 'tubelets.jsonl'),
            'ground_truth': os.path.join(out_dir, 'ground_truth.jsonl'),
            'metadata': os.path.join(out_dir, 'scenario.json'),
        }
        write_detections(paths['detections'], self.detections)
        write_tubelets(paths['tubelets'], self.tubelets)
        write_ground_truth(paths['ground_truth'], self.gt)
        meta = {
            'seed': self.seed,
            'rng_version': self.rng_version,
            'videos': sorted(self.tracks),
            'num_frames': self.params.num_frames,
            'tubelet_length': self.params.tubelet_length,
            'image_size': list(self.params.motion.image_size),
        }
        with open(paths['metadata'], 'w', encoding='utf-8', newline='\n') as handle:
            handle.write(json.dumps(meta, indent=2, sort_keys=True))
            handle.write('\n')
        return paths


def generate_scenario(seed: int, params: ScenarioParams = ScenarioParams()) -> Scenario:
    """Tracks -> degraded detections -> tubelets for every video, one stream"""
    rng = ScenarioRandom(seed)
    scenario = Scenario(seed=seed, params=params)
    for v in range(params.n_videos):
        video_id = f"vid{v}"
        tracks = generate_tracks(rng, params.n_tracks, params.num_frames, params.motion)
        dets = degrade(tracks, params.noise, rng, params.motion, video_id)
        tubelets, dets = derive_tubelets(tracks, dets, params.tubelet_length, rng,
                                         jitter=params.tubelet_jitter,
                                         duplicates=params.tubelet_duplicates,
                                         video_id=video_id, image_size=params.motion.image_size)
        scenario.tracks[video_id] = tracks
        scenario.detections.extend(dets)
        scenario.tubelets.extend(tubelets)
        scenario.gt.extend(ground_truth_from_tracks(tracks, video_id))
    logger.info("scenario seed=%d: %d detections, %d tubelets, %d ground-truth boxes",
                seed, len(scenario.detections), len(scenario.tubelets), len(scenario.gt))
    return scenario
