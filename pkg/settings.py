#!/usr/bin/env python3
"""
Pipeline configuration
Defaults, then a dotenv-style config file of FANET_* keys, then FANET_*
environment variables, then command-line overrides
"""

import logging
import os
from dataclasses import dataclass, fields, replace
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values

from errors import ConfigError, PreconditionError
from head_fusion import FUSION_ORDERS, HEAD_MODES
from tube_linking import LinkingConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = 'FANET_'


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the post-processing chain"""

    n_frames: int = 6
    beta: float = 0.05
    alpha: float = 0.10
    rpn_nms_iou: float = 0.7
    tnms_iou: Optional[float] = None  # None -> rpn_nms_iou
    final_nms_iou: float = 0.5
    voting_iou: float = 0.5
    voting: bool = True
    fusion_order: str = 'average_then_fuse'
    head_mode: str = 'double'
    use_cascade: bool = True
    link: bool = True
    merge: bool = True
    rescore: bool = True
    eval_ious: Tuple[float, ...] = (0.5,)
    seed: int = 0
    workers: int = 1

    @property
    def effective_tnms_iou(self) -> float:
        return self.rpn_nms_iou if self.tnms_iou is None else self.tnms_iou

    def linking(self) -> LinkingConfig:
        try:
            return LinkingConfig(beta=self.beta, alpha=self.alpha, nms_iou=self.final_nms_iou,
                                 voting_iou=self.voting_iou, n_frames=self.n_frames)
        except PreconditionError as e:
            raise ConfigError(str(e))

    def validate(self) -> 'PipelineConfig':
        if self.n_frames < 1:
            raise ConfigError(f"tubelet length N must be >= 1, got {self.n_frames}")
        for name in ('beta', 'alpha'):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {getattr(self, name)}")
        for name in ('rpn_nms_iou', 'final_nms_iou', 'voting_iou', 'effective_tnms_iou'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {getattr(self, name)}")
        for t in self.eval_ious:
            if not 0.0 <= t <= 1.0:
                raise ConfigError(f"evaluation IoU {t} outside [0, 1]")
        if self.head_mode not in HEAD_MODES:
            raise ConfigError(f"head mode must be one of {HEAD_MODES}, got {self.head_mode!r}")
        if self.fusion_order not in FUSION_ORDERS:
            raise ConfigError(f"fusion order must be one of {FUSION_ORDERS}, got {self.fusion_order!r}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.merge and not self.link:
            logger.debug("merge requested without linking; merge is skipped")
        return self


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_float(text: str) -> Optional[float]:
    return None if not text.strip() else float(text)


def _parse_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in text.split(',') if part.strip())


# FANET_<KEY> -> (field name, parser)
KEYS: Dict[str, Tuple[str, Callable[[str], Any]]] = {
    'N': ('n_frames', int),
    'BETA': ('beta', float),
    'ALPHA': ('alpha', float),
    'RPN_NMS_IOU': ('rpn_nms_iou', float),
    'TNMS_IOU': ('tnms_iou', _parse_optional_float),
    'FINAL_NMS_IOU': ('final_nms_iou', float),
    'VOTING_IOU': ('voting_iou', float),
    'VOTING': ('voting', _parse_bool),
    'FUSION_ORDER': ('fusion_order', str.strip),
    'HEAD_MODE': ('head_mode', str.strip),
    'USE_CASCADE': ('use_cascade', _parse_bool),
    'LINK': ('link', _parse_bool),
    'MERGE': ('merge', _parse_bool),
    'RESCORE': ('rescore', _parse_bool),
    'EVAL_IOUS': ('eval_ious', _parse_floats),
    'SEED': ('seed', int),
    'WORKERS': ('workers', int),
}


def _apply(values: Dict[str, Any], raw: Mapping[str, Optional[str]], source: str, strict: bool) -> None:
    for key, text in raw.items():
        if not key.startswith(ENV_PREFIX):
            continue
        short = key[len(ENV_PREFIX):]
        if short not in KEYS:
            if strict:
                raise ConfigError(f"{source}: unknown setting {key}")
            logger.warning("ignoring unknown setting %s from %s", key, source)
            continue
        name, parse = KEYS[short]
        try:
            values[name] = parse(text if text is not None else '')
        except ValueError as e:
            raise ConfigError(f"{source}: bad value for {key}: {e}")


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
                environ: Optional[Mapping[str, str]] = None) -> PipelineConfig:
    """Build a validated PipelineConfig

    Args:
        path: optional dotenv file with FANET_* keys
        overrides: field name -> value (None entries are ignored)
        environ: environment mapping, defaults to os.environ
    """
    values: Dict[str, Any] = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        _apply(values, dotenv_values(path), path, strict=True)
    _apply(values, os.environ if environ is None else environ, 'environment', strict=False)

    known = {f.name for f in fields(PipelineConfig)}
    for name, value in (overrides or {}).items():
        if value is None:
            continue
        if name not in known:
            raise ConfigError(f"unknown setting {name}")
        values[name] = value

    try:
        config = replace(PipelineConfig(), **values)
    except TypeError as e:
        raise ConfigError(str(e))
    return config.validate()
