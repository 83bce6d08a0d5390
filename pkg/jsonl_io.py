#!/usr/bin/env python3
"""
JSON-Lines readers and writers for detections, tubelets, tubes and ground truth
One record per line, UTF-8. Unknown fields are kept and written back after
the known ones.
"""

import json
import logging
import os
from typing import Any, Dict, Iterable, Iterator, List, Tuple

from errors import FanetError, IngestionError
from evaluation import GroundTruthBox
from geometry import BBox, Detection
from tube_linking import Tube
from tubelets import Tubelet

logger = logging.getLogger(__name__)

DETECTION_FIELDS = ('video', 'frame', 'class', 'score', 'bbox', 'proposal', 'proposals',
                    'stage_scores', 'temporal_score')
TUBELET_FIELDS = ('video', 'id', 'end_frame', 'boxes', 'scores', 'box_ids')
GROUND_TRUTH_FIELDS = ('video', 'frame', 'class', 'bbox', 'track')


def read_jsonl(path: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield (line number, record) for every non-blank line"""
    try:
        handle = open(path, 'rb')
    except OSError as e:
        raise IngestionError(f"cannot open: {e}", path)
    with handle:
        for lineno, raw in enumerate(handle, start=1):
            try:
                line = raw.decode('utf-8')
            except UnicodeDecodeError as e:
                raise IngestionError(f"invalid UTF-8 at byte {e.start}", path, lineno)
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise IngestionError(f"malformed JSON ({e.msg})", path, lineno)
            if not isinstance(record, dict):
                raise IngestionError("record is not a JSON object", path, lineno)
            yield lineno, record


def write_jsonl(path: str, records: Iterable[Dict[str, Any]]) -> int:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False))
            handle.write('\n')
            count += 1
    logger.debug("wrote %d records to %s", count, path)
    return count


# field checks -------------------------------------------------------------

def _require(record: Dict[str, Any], key: str):
    if key not in record:
        raise ValueError(f"missing field {key!r}")
    return record[key]


def _as_int(value, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"field {key!r} must be an integer")
    return value


def _as_float(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"field {key!r} must be a number")
    return float(value)


def _as_str(value, key: str) -> str:
    if not isinstance(value, str):
        raise ValueError(f"field {key!r} must be a string")
    return value


def _as_list(value, key: str) -> list:
    if not isinstance(value, list):
        raise ValueError(f"field {key!r} must be a list")
    return value


def _as_box(value, key: str) -> BBox:
    coords = _as_list(value, key)
    if len(coords) != 4:
        raise ValueError(f"field {key!r} needs 4 coordinates")
    return BBox(*(_as_float(v, key) for v in coords))


def _extra(record: Dict[str, Any], known: Tuple[str, ...]) -> Dict[str, Any]:
    return {k: v for k, v in record.items() if k not in known}


def _with_extra(record: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    for key in sorted(extra):
        if key not in record:
            record[key] = extra[key]
    return record


def _parse_lines(path: str, parse) -> list:
    items = []
    for lineno, record in read_jsonl(path):
        try:
            items.append(parse(record, lineno))
        except (ValueError, FanetError) as e:
            raise IngestionError(str(e), path, lineno)
    return items


# detections ---------------------------------------------------------------

def parse_detection(record: Dict[str, Any], lineno: int = 0) -> Detection:
    uid = f"L{lineno}"
    proposal = record.get('proposal')
    if proposal is not None:
        proposal = _as_str(proposal, 'proposal')
    sources = {proposal if proposal is not None else uid}
    listed = None
    if 'proposals' in record:
        listed = tuple(_as_str(p, 'proposals') for p in _as_list(record['proposals'], 'proposals'))
        sources.update(listed)

    stage_scores = None
    if 'stage_scores' in record:
        stage_scores = tuple(_as_float(s, 'stage_scores') for s in _as_list(record['stage_scores'], 'stage_scores'))
    temporal_score = None
    if 'temporal_score' in record:
        temporal_score = _as_float(record['temporal_score'], 'temporal_score')

    return Detection(
        box=_as_box(_require(record, 'bbox'), 'bbox'),
        class_id=_as_int(_require(record, 'class'), 'class'),
        score=_as_float(_require(record, 'score'), 'score'),
        frame=_as_int(_require(record, 'frame'), 'frame'),
        source_proposal_ids=frozenset(sources),
        video_id=_as_str(_require(record, 'video'), 'video'),
        uid=uid,
        proposal=proposal,
        stage_scores=stage_scores,
        temporal_score=temporal_score,
        listed_proposals=listed,
        extra=_extra(record, DETECTION_FIELDS),
    )


def detection_record(d: Detection) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        'video': d.video_id,
        'frame': d.frame,
        'class': d.class_id,
        'score': d.score,
        'bbox': d.box.as_list(),
    }
    if d.proposal is not None:
        record['proposal'] = d.proposal
    own = d.proposal if d.proposal is not None else d.uid
    listed = list(d.listed_proposals or ())
    added = sorted(d.source_proposal_ids - {own} - set(listed))
    if d.listed_proposals is not None or added:
        record['proposals'] = listed + added
    if d.stage_scores is not None:
        record['stage_scores'] = list(d.stage_scores)
    if d.temporal_score is not None:
        record['temporal_score'] = d.temporal_score
    return _with_extra(record, d.extra)


def read_detections(path: str) -> List[Detection]:
    dets = _parse_lines(path, parse_detection)
    logger.info("read %d detections from %s", len(dets), path)
    return dets


def write_detections(path: str, dets: Iterable[Detection]) -> int:
    return write_jsonl(path, (detection_record(d) for d in dets))


# tubelets -----------------------------------------------------------------

def parse_tubelet(record: Dict[str, Any], lineno: int = 0) -> Tubelet:
    boxes = tuple(_as_box(b, 'boxes') for b in _as_list(_require(record, 'boxes'), 'boxes'))
    scores = tuple(_as_float(s, 'scores') for s in _as_list(_require(record, 'scores'), 'scores'))
    box_ids = tuple(_as_str(b, 'box_ids') for b in _as_list(_require(record, 'box_ids'), 'box_ids'))
    return Tubelet(
        uid=_as_str(_require(record, 'id'), 'id'),
        video_id=_as_str(_require(record, 'video'), 'video'),
        end_frame=_as_int(_require(record, 'end_frame'), 'end_frame'),
        boxes=boxes,
        box_scores=scores,
        box_ids=box_ids,
        extra=_extra(record, TUBELET_FIELDS),
    )


def tubelet_record(t: Tubelet) -> Dict[str, Any]:
    record = {
        'video': t.video_id,
        'id': t.uid,
        'end_frame': t.end_frame,
        'boxes': [b.as_list() for b in t.boxes],
        'scores': list(t.box_scores),
        'box_ids': list(t.box_ids),
    }
    return _with_extra(record, t.extra)


def read_tubelets(path: str) -> List[Tubelet]:
    tubelets = _parse_lines(path, parse_tubelet)
    logger.info("read %d tubelets from %s", len(tubelets), path)
    return tubelets


def write_tubelets(path: str, tubelets: Iterable[Tubelet]) -> int:
    return write_jsonl(path, (tubelet_record(t) for t in tubelets))


# ground truth -------------------------------------------------------------

def parse_ground_truth(record: Dict[str, Any], lineno: int = 0) -> GroundTruthBox:
    track = record.get('track', '')
    return GroundTruthBox(
        video_id=_as_str(_require(record, 'video'), 'video'),
        frame=_as_int(_require(record, 'frame'), 'frame'),
        class_id=_as_int(_require(record, 'class'), 'class'),
        box=_as_box(_require(record, 'bbox'), 'bbox'),
        track_id=_as_str(track, 'track'),
        extra=_extra(record, GROUND_TRUTH_FIELDS),
    )


def ground_truth_record(g: GroundTruthBox) -> Dict[str, Any]:
    record = {
        'video': g.video_id,
        'frame': g.frame,
        'class': g.class_id,
        'bbox': g.box.as_list(),
        'track': g.track_id,
    }
    return _with_extra(record, g.extra)


def read_ground_truth(path: str) -> List[GroundTruthBox]:
    gts = _parse_lines(path, parse_ground_truth)
    logger.info("read %d ground-truth boxes from %s", len(gts), path)
    return gts


def write_ground_truth(path: str, gts: Iterable[GroundTruthBox]) -> int:
    return write_jsonl(path, (ground_truth_record(g) for g in gts))


# tubes --------------------------------------------------------------------

def tube_record(t: Tube) -> Dict[str, Any]:
    return {
        'video': t.video_id,
        'id': t.uid,
        'class': t.class_id,
        'frames': t.frames,
        'boxes': [d.box.as_list() for d in t.detections],
        'orig_scores': list(t.original_scores),
        'final_score': t.final_score,
    }


def write_tubes(path: str, tubes: Iterable[Tube]) -> int:
    return write_jsonl(path, (tube_record(t) for t in tubes))
