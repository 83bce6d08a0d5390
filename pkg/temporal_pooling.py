#!/usr/bin/env python3
"""
Temporal feature aggregation for tubelets
RoI Align on dense H x W x C feature maps, channel interleaving across
frames, and Temporal Pooling (channel-wise max over the tubelet's frames)
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence

import numpy as np

from errors import InvalidGeometryError, PreconditionError, ResourceError
from geometry import BBox
from tubelets import Tubelet, assign_pyramid_level


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense H x W x C feature grid; stride is input pixels per cell"""

    data: np.ndarray
    stride: float = 1.0

    def __post_init__(self):
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise PreconditionError(f"feature map must be H x W x C with positive sizes, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise PreconditionError("feature map contains NaN or Inf")
        if self.stride <= 0:
            raise PreconditionError(f"feature map stride must be positive, got {self.stride}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class PoolingConfig:
    out_h: int = 7
    out_w: int = 7
    samples_per_bin: int = 2
    k0: int = 4
    canonical_size: float = 224.0
    min_level: int = 2
    max_level: int = 5


# frame -> pyramid level -> map
FeaturePyramid = Mapping[int, Mapping[int, FeatureMap]]


def _bilinear(data: np.ndarray, y: float, x: float) -> np.ndarray:
    """Bilinear read of all channels at continuous cell coordinates (y, x)

    Points outside [-1, H] x [-1, W] read 0; points in the one-cell border band
    are clamped onto the edge cells.
    """
    height, width = data.shape[0], data.shape[1]
    if y < -1.0 or y > height or x < -1.0 or x > width:
        return np.zeros(data.shape[2], dtype=np.float64)
    y = max(y, 0.0)
    x = max(x, 0.0)

    y_low = int(math.floor(y))
    x_low = int(math.floor(x))
    if y_low >= height - 1:
        y_low = y_high = height - 1
        y = float(y_low)
    else:
        y_high = y_low + 1
    if x_low >= width - 1:
        x_low = x_high = width - 1
        x = float(x_low)
    else:
        x_high = x_low + 1

    ly = y - y_low
    lx = x - x_low
    hy = 1.0 - ly
    hx = 1.0 - lx
    return (hy * hx * data[y_low, x_low] + hy * lx * data[y_low, x_high]
            + ly * hx * data[y_high, x_low] + ly * lx * data[y_high, x_high])


def roi_align(fm: FeatureMap, box: BBox, out_h: int = 7, out_w: int = 7,
              samples_per_bin: int = 2) -> np.ndarray:
    """Fixed-size out_h x out_w x C features for one box

    The box is in input pixels; feature cell (r, c) is centred on pixel
    ((c + 0.5) * stride, (r + 0.5) * stride). Each output bin averages a
    samples_per_bin x samples_per_bin grid of bilinear samples.
    """
    if out_h < 1 or out_w < 1 or samples_per_bin < 1:
        raise PreconditionError(f"bad RoI Align sizes out={out_h}x{out_w} samples={samples_per_bin}")
    if box.width <= 0 or box.height <= 0:
        raise InvalidGeometryError(f"degenerate RoI {box.as_list()}")

    data = fm.data.astype(np.float64, copy=False)
    x1 = box.x1 / fm.stride - 0.5
    y1 = box.y1 / fm.stride - 0.5
    bin_w = box.width / fm.stride / out_w
    bin_h = box.height / fm.stride / out_h
    n = samples_per_bin

    out = np.zeros((out_h, out_w, fm.channels), dtype=np.float64)
    for ph in range(out_h):
        for pw in range(out_w):
            acc = np.zeros(fm.channels, dtype=np.float64)
            for iy in range(n):
                y = y1 + ph * bin_h + (iy + 0.5) * bin_h / n
                for ix in range(n):
                    x = x1 + pw * bin_w + (ix + 0.5) * bin_w / n
                    acc += _bilinear(data, y, x)
            out[ph, pw] = acc / (n * n)
    return out


def concat_interleave(maps: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate N h x w x C maps so that channel N*k + t is channel k of frame t"""
    if not maps:
        raise PreconditionError("nothing to concatenate")
    shape = maps[0].shape
    for m in maps:
        if m.ndim != 3 or m.shape != shape:
            raise PreconditionError(f"RoI feature shapes differ: {m.shape} vs {shape}")
    h, w, c = shape
    return np.stack(maps, axis=-1).reshape(h, w, c * len(maps))


def temporal_pool(concatenated: np.ndarray, n_frames: int) -> np.ndarray:
    """Channel-wise max over the N interleaved frames -> h x w x C"""
    if n_frames < 1:
        raise PreconditionError(f"n_frames must be >= 1, got {n_frames}")
    h, w, nc = concatenated.shape
    if nc % n_frames:
        raise PreconditionError(f"{nc} channels cannot be split into {n_frames} frames")
    return concatenated.reshape(h, w, nc // n_frames, n_frames).max(axis=-1)


def frame_window(end_frame: int, n: int) -> List[int]:
    """Frames read for a tubelet ending at end_frame

    Frames before the start of the video map onto frame 0, so the first frame
    is replicated for the first N - 1 tubelets of a video.
    """
    return [max(0, f) for f in range(end_frame - n + 1, end_frame + 1)]


def aggregate_tubelet_features(fms: FeaturePyramid, tubelet: Tubelet,
                               config: PoolingConfig = PoolingConfig()) -> np.ndarray:
    """Per-box level assignment -> RoI Align per frame -> interleave -> pool"""
    per_frame: List[np.ndarray] = []
    for frame, box in zip(frame_window(tubelet.end_frame, tubelet.length), tubelet.boxes):
        level = assign_pyramid_level(box, config.k0, config.canonical_size,
                                     config.min_level, config.max_level)
        levels: Dict[int, FeatureMap] = fms.get(frame)
        if levels is None or level not in levels:
            raise ResourceError(f"no feature map for frame {frame} level {level} (tubelet {tubelet.uid})")
        per_frame.append(roi_align(levels[level], box, config.out_h, config.out_w, config.samples_per_bin))
    return temporal_pool(concat_interleave(per_frame), len(per_frame))
