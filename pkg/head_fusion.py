#!/usr/bin/env python3
"""
Double-head score fusion
Spatial (cascade) and spatio-temporal class scores combined as
p = p_tmp + p_spt * (1 - p_tmp)
"""

from typing import Optional, Sequence

import numpy as np

from errors import PreconditionError

HEAD_MODES = ('double', 'spatial', 'temporal')
FUSION_ORDERS = ('average_then_fuse', 'fuse_then_average')


def _as_scores(v, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if arr.ndim != 1:
        raise PreconditionError(f"{name} must be a score vector, got shape {arr.shape}")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise PreconditionError(f"{name} has entries outside [0, 1]")
    return arr


def fuse_scores(p_spt, p_tmp) -> np.ndarray:
    """Elementwise p_tmp + p_spt * (1 - p_tmp)"""
    spt = _as_scores(p_spt, 'p_spt')
    tmp = _as_scores(p_tmp, 'p_tmp')
    if spt.shape != tmp.shape:
        raise PreconditionError(f"score vectors differ in length: {spt.shape[0]} vs {tmp.shape[0]}")
    # tmp + spt * (1 - tmp) can round above 1
    return np.minimum(tmp + spt * (1.0 - tmp), 1.0)


def cascade_average(stage_scores: Sequence) -> np.ndarray:
    """Elementwise mean of the per-stage score vectors"""
    if len(stage_scores) == 0:
        raise PreconditionError("cascade_average needs at least one stage")
    stages = [_as_scores(s, f"stage {i}") for i, s in enumerate(stage_scores)]
    for s in stages[1:]:
        if s.shape != stages[0].shape:
            raise PreconditionError("cascade stages have different lengths")
    return np.mean(np.stack(stages), axis=0)


def combine_head_scores(stage_scores: Optional[Sequence], temporal_score,
                        mode: str = 'double', use_cascade: bool = True,
                        order: str = 'average_then_fuse') -> np.ndarray:
    """Final class scores for one detection under a head configuration

    mode 'spatial' ignores the temporal head, 'temporal' ignores the spatial
    one. Without the cascade only the first spatial stage counts.
    """
    if mode not in HEAD_MODES:
        raise PreconditionError(f"unknown head mode {mode!r}")
    if order not in FUSION_ORDERS:
        raise PreconditionError(f"unknown fusion order {order!r}")

    if mode == 'temporal':
        if temporal_score is None:
            raise PreconditionError("temporal head mode needs a temporal score")
        return _as_scores(temporal_score, 'p_tmp')

    if not stage_scores:
        raise PreconditionError(f"{mode} head mode needs spatial stage scores")
    stages = list(stage_scores) if use_cascade else [stage_scores[0]]

    if mode == 'spatial':
        return cascade_average(stages)

    if temporal_score is None:
        raise PreconditionError("double head mode needs a temporal score")
    if order == 'average_then_fuse':
        return fuse_scores(cascade_average(stages), temporal_score)
    return cascade_average([fuse_scores(s, temporal_score) for s in stages])
