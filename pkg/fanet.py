#!/usr/bin/env python3
"""
FANet post-processing command line
Subcommands: synth, tnms, link, pool, eval, pipeline

Examples:
  python fanet.py synth --seed 7 --out-dir runs/s7
  python fanet.py pipeline --detections runs/s7/detections.jsonl \\
      --tubelets runs/s7/tubelets.jsonl --gt runs/s7/ground_truth.jsonl --out-dir runs/s7/out
  python fanet.py eval --detections runs/s7/out/detections.jsonl --gt runs/s7/ground_truth.jsonl --coco
"""

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional

from errors import FanetError, exit_code_for
from evaluation import COCO_THRESHOLDS, evaluate
from fanet_pipeline import PipelineResult, run_pipeline
from jsonl_io import (read_detections, read_ground_truth, read_tubelets, write_detections,
                      write_jsonl, write_tubelets, write_tubes)
from log_setup import configure_logging
from scenario_generator import (MotionParams, NoiseParams, ScenarioParams, ScenarioRandom,
                                generate_scenario, synthetic_feature_pyramid)
from settings import PipelineConfig, load_config
from temporal_pooling import PoolingConfig, aggregate_tubelet_features, frame_window
from tubelets import assign_pyramid_level, tubelet_nms_grouped

logger = logging.getLogger('fanet')


def _print_table(title: str, table, summary: Dict[str, float]) -> None:
    print("=" * 60)
    print(title)
    print("=" * 60)
    if table.empty:
        print("(no classes with ground truth)")
    else:
        print(table.to_string(float_format=lambda v: f"{v:.4f}"))
    print("-" * 60)
    for key, value in summary.items():
        print(f"{key:<16} {value:.4f}")


def _write_metrics(path: str, summary: Dict[str, float]) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        handle.write(json.dumps(summary, indent=2, sort_keys=True))
        handle.write('\n')


def _write_result(out_dir: str, result: PipelineResult) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_detections(os.path.join(out_dir, 'detections.jsonl'), result.detections)
    write_tubes(os.path.join(out_dir, 'tubes.jsonl'), result.tubes)
    if result.metrics is not None:
        _write_metrics(os.path.join(out_dir, 'metrics.json'), result.metrics)
    logger.info("wrote %d detections and %d tubes to %s",
                len(result.detections), len(result.tubes), out_dir)


def _config_from_args(args) -> PipelineConfig:
    overrides = {
        'n_frames': getattr(args, 'n', None),
        'beta': getattr(args, 'beta', None),
        'alpha': getattr(args, 'alpha', None),
        'tnms_iou': getattr(args, 'tnms_iou', None),
        'final_nms_iou': getattr(args, 'nms_iou', None),
        'voting_iou': getattr(args, 'voting_iou', None),
        'head_mode': getattr(args, 'head_mode', None),
        'fusion_order': getattr(args, 'fusion_order', None),
        'workers': getattr(args, 'workers', None),
        'seed': getattr(args, 'seed', None),
    }
    if getattr(args, 'iou', None):
        overrides['eval_ious'] = tuple(args.iou)
    for flag, name in (('no_link', 'link'), ('no_merge', 'merge'), ('no_rescore', 'rescore'),
                       ('no_voting', 'voting'), ('no_cascade', 'use_cascade')):
        if getattr(args, flag, False):
            overrides[name] = False
    return load_config(args.config, overrides)


# subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    config = _config_from_args(args)
    noise = NoiseParams.clean() if args.clean else NoiseParams(
        loc_sigma=args.loc_sigma, score_mean=args.score_mean, score_sigma=args.score_sigma,
        p_miss=args.p_miss, fp_rate=args.fp_rate, p_confuse=args.p_confuse,
        duplicates=args.duplicates, head_scores=args.head_scores)
    params = ScenarioParams(
        n_videos=args.videos, n_tracks=args.tracks, num_frames=args.frames,
        tubelet_length=config.n_frames, motion=MotionParams(num_classes=args.classes),
        noise=noise, tubelet_duplicates=args.tubelet_duplicates)
    scenario = generate_scenario(args.seed, params)
    paths = scenario.write(args.out_dir)
    for kind, path in paths.items():
        logger.info("%s -> %s", kind, path)
    return 0


def cmd_tnms(args) -> int:
    config = _config_from_args(args)
    tubelets = read_tubelets(args.tubelets)
    kept = tubelet_nms_grouped(tubelets, config.effective_tnms_iou)
    write_tubelets(args.out, kept)
    logger.info("kept %d of %d tubelets (overlap threshold %.2f)",
                len(kept), len(tubelets), config.effective_tnms_iou)
    return 0


def cmd_link(args) -> int:
    config = _config_from_args(args)
    detections = read_detections(args.detections)
    tubelets = read_tubelets(args.tubelets) if args.tubelets else []
    result = run_pipeline(detections, tubelets, config, suppress=False, tnms=False,
                          progress=not args.quiet)
    _write_result(args.out_dir, result)
    return 0


def cmd_pool(args) -> int:
    """Aggregate features for tubelets of a small seeded scenario"""
    config = _config_from_args(args)
    image_size = (320.0, 240.0)
    params = ScenarioParams(
        n_tracks=args.tracks, num_frames=config.n_frames + 2, tubelet_length=config.n_frames,
        motion=MotionParams(image_size=image_size, min_size=24.0, max_size=200.0),
        noise=NoiseParams.clean(), tubelet_duplicates=0)
    scenario = generate_scenario(args.seed, params)
    tubelets = scenario.tubelets[:args.limit]
    frames = sorted({f for t in tubelets for f in frame_window(t.end_frame, t.length)})
    pyramid = synthetic_feature_pyramid(ScenarioRandom(args.seed + 1), frames, image_size,
                                        channels=args.channels)

    pooling = PoolingConfig()
    records: List[Dict] = []
    for t in tubelets:
        features = aggregate_tubelet_features(pyramid, t, pooling)
        records.append({
            'tubelet': t.uid,
            'levels': [assign_pyramid_level(b) for b in t.boxes],
            'shape': list(features.shape),
            'mean': float(features.mean()),
            'max': float(features.max()),
        })
        logger.debug("pooled %s -> %s", t.uid, features.shape)
    if args.out:
        write_jsonl(args.out, records)
    else:
        for record in records:
            print(json.dumps(record))
    logger.info("pooled %d tubelets", len(records))
    return 0


def cmd_eval(args) -> int:
    detections = read_detections(args.detections)
    gts = read_ground_truth(args.gt)
    thresholds = COCO_THRESHOLDS if args.coco else tuple(args.iou or (0.5,))
    area_range = tuple(args.area_range) if args.area_range else None
    table, summary = evaluate(detections, gts, thresholds, area_range)
    _print_table(f"Evaluation of {args.detections}", table, summary)
    if args.csv:
        table.to_csv(args.csv, float_format='%.6f')
        logger.info("per-class table -> %s", args.csv)
    if args.metrics:
        _write_metrics(args.metrics, summary)
    return 0


def cmd_pipeline(args) -> int:
    config = _config_from_args(args)
    detections = read_detections(args.detections)
    tubelets = read_tubelets(args.tubelets) if args.tubelets else []
    gts = read_ground_truth(args.gt) if args.gt else None
    result = run_pipeline(detections, tubelets, config, gts=gts, progress=not args.quiet)
    _write_result(args.out_dir, result)
    if result.metrics is not None:
        _print_table("Pipeline evaluation", result.table, result.metrics)
    return 0


# parser -------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument('--config', help='dotenv file with FANET_* settings')
    p.add_argument('-v', '--verbose', action='count', default=0, help='debug logging')
    p.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')


def _add_linking(p: argparse.ArgumentParser) -> None:
    p.add_argument('--n', type=int, help='tubelet length N (default 6)')
    p.add_argument('--beta', type=float, help='linking score threshold (default 0.05)')
    p.add_argument('--alpha', type=float, help='rescoring top fraction (default 0.10)')
    p.add_argument('--no-link', action='store_true', help='stop after the beta filter')
    p.add_argument('--no-merge', action='store_true', help='skip tubelet-guided merging')
    p.add_argument('--no-rescore', action='store_true', help='keep per-detection scores')
    p.add_argument('--workers', type=int, help='parallel (video, class) partitions')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='FANet video detection post-processing',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__.split('Examples:', 1)[1] if __doc__ else None)
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', help='generate a seeded synthetic scenario')
    _add_common(p)
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out-dir', required=True)
    p.add_argument('--n', type=int, help='tubelet length N (default 6)')
    p.add_argument('--videos', type=int, default=1)
    p.add_argument('--tracks', type=int, default=10)
    p.add_argument('--frames', type=int, default=40)
    p.add_argument('--classes', type=int, default=3)
    p.add_argument('--clean', action='store_true', help='noise-free detections')
    p.add_argument('--loc-sigma', type=float, default=0.05)
    p.add_argument('--score-mean', type=float, default=0.9)
    p.add_argument('--score-sigma', type=float, default=0.05)
    p.add_argument('--p-miss', type=float, default=0.0)
    p.add_argument('--fp-rate', type=float, default=0.0)
    p.add_argument('--p-confuse', type=float, default=0.0)
    p.add_argument('--duplicates', type=int, default=0, help='extra raw detections per box')
    p.add_argument('--tubelet-duplicates', type=int, default=1)
    p.add_argument('--head-scores', action='store_true', help='emit stage and temporal head scores')
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('tnms', help='tubelet non-maximum suppression')
    _add_common(p)
    p.add_argument('--tubelets', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--tnms-iou', type=float, help='overlap threshold (default: RPN NMS IoU)')
    p.add_argument('--n', type=int)
    p.set_defaults(func=cmd_tnms)

    p = sub.add_parser('link', help='link already-suppressed detections into tubes')
    _add_common(p)
    _add_linking(p)
    p.add_argument('--detections', required=True)
    p.add_argument('--tubelets')
    p.add_argument('--out-dir', required=True)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser('pool', help='temporal feature aggregation on a seeded scenario')
    _add_common(p)
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--n', type=int)
    p.add_argument('--tracks', type=int, default=3)
    p.add_argument('--limit', type=int, default=5)
    p.add_argument('--channels', type=int, default=256)
    p.add_argument('--out')
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser('eval', help='frame-level mAP')
    _add_common(p)
    p.add_argument('--detections', required=True)
    p.add_argument('--gt', required=True)
    p.add_argument('--iou', type=float, nargs='+', help='IoU thresholds (default 0.5)')
    p.add_argument('--coco', action='store_true', help='thresholds 0.50:0.05:0.95')
    p.add_argument('--area-range', type=float, nargs=2, metavar=('LO', 'HI'),
                   help='only boxes with LO <= area < HI (small objects: 16 256)')
    p.add_argument('--csv', help='write the per-class table')
    p.add_argument('--metrics', help='write the summary as JSON')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('pipeline', help='full post-processing chain')
    _add_common(p)
    _add_linking(p)
    p.add_argument('--detections', required=True)
    p.add_argument('--tubelets')
    p.add_argument('--gt')
    p.add_argument('--out-dir', required=True)
    p.add_argument('--tnms-iou', type=float)
    p.add_argument('--nms-iou', type=float, help='final per-frame NMS IoU (default 0.5)')
    p.add_argument('--voting-iou', type=float)
    p.add_argument('--no-voting', action='store_true')
    p.add_argument('--head-mode', choices=('double', 'spatial', 'temporal'))
    p.add_argument('--fusion-order', choices=('average_then_fuse', 'fuse_then_average'))
    p.add_argument('--no-cascade', action='store_true', help='first spatial stage score only')
    p.add_argument('--iou', type=float, nargs='+', help='evaluation IoU thresholds')
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return args.func(args)
    except FanetError as e:
        logger.error("%s", e)
        return exit_code_for(e)
    except OSError as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
