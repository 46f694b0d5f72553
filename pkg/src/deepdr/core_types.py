"""Value ranges and normalization shared by every stage of the pipeline.

Conventions used throughout the package:

* RGB frames live in [-1, 1], stored as ``H x W x 3`` arrays on disk/in numpy
  and as ``N x 3 x H x W`` tensors inside the networks.
* Depth maps live in [0, 1]; ``depth_scale`` (meters per unit) converts back.
* Inpaint masks are binary with ``1 = hole``.
* Occlusion masks are soft weights in [0, 1] with ``1 = valid``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch


@dataclass
class LossWeights:
    rec: float = 10.0
    per: float = 10.0
    sty: float = 250.0
    grad: float = 100.0
    seg: float = 10.0
    t: float = 10.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be nonnegative, got {v}")


@dataclass
class DepthMap:
    data: np.ndarray
    depth_scale: float = 10.0

    def __post_init__(self):
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")

    def to_meters(self) -> np.ndarray:
        return self.data * self.depth_scale


@dataclass
class SequenceSample:
    """T aligned frames plus ground-truth motion.

    ``flow_fwd[t]`` maps frame t to t-1 and ``flow_to_first[t]`` maps frame t
    to frame 0 (0-based indexing). Entries that are undefined (t=0 for both,
    t=1 for the to-first list) are ``None``; occlusion lists mirror them.
    """
    color: np.ndarray  # T x H x W x 3, [-1, 1]
    depth: np.ndarray  # T x H x W, [0, 1]
    seg: np.ndarray  # T x H x W, int class ids
    mask: np.ndarray  # T x H x W, {0, 1}
    flow_fwd: list = field(default_factory=list)
    occl_fwd: list = field(default_factory=list)
    flow_to_first: list = field(default_factory=list)
    occl_to_first: list = field(default_factory=list)
    depth_scale: float = 10.0
    num_classes: int = 2
    background_ids: tuple = (0,)
    shadow: Optional[np.ndarray] = None  # T x H x W bool, renderer-known shadow pixels

    def __post_init__(self):
        T, H, W = self.depth.shape
        if T < 1:
            raise ValueError("a sequence needs at least one frame")
        for name in ("color", "seg", "mask"):
            arr = getattr(self, name)
            if arr.shape[:3] != (T, H, W):
                raise ValueError(f"{name} has shape {arr.shape}, expected leading {(T, H, W)}")
        for name in ("flow_fwd", "occl_fwd", "flow_to_first", "occl_to_first"):
            lst = getattr(self, name)
            if lst and len(lst) != T:
                raise ValueError(f"{name} must have length T={T}")

    @property
    def num_frames(self) -> int:
        return self.depth.shape[0]

    @property
    def size(self) -> tuple:
        return self.depth.shape[1:]


def normalize_rgb(raw) -> np.ndarray:
    raw = np.asarray(raw)
    if raw.dtype.kind == "f" and not np.all(raw == np.round(raw)):
        raise ValueError("RGB input must be integer valued")
    if raw.size and (raw.min() < 0 or raw.max() > 255):
        raise ValueError("RGB input must lie in [0, 255]")
    return raw.astype(np.float64) * (2.0 / 255.0) - 1.0


def denormalize_rgb(frame) -> np.ndarray:
    """Inverse of :func:`normalize_rgb`, rounded to uint8."""
    frame = np.asarray(frame, dtype=np.float64)
    return np.clip(np.round((frame + 1.0) * 127.5), 0, 255).astype(np.uint8)


def scale_depth(metric, depth_max: float = 10.0) -> DepthMap:
    if depth_max <= 0:
        raise ValueError("depth_max must be positive")
    metric = np.asarray(metric, dtype=np.float64)
    if np.any(metric < 0):
        raise ValueError("metric depth must be nonnegative")
    return DepthMap(np.clip(metric / depth_max, 0.0, 1.0), depth_max)


def apply_mask(frame, mask):
    """Zero the hole pixels (mask == 1). Works for numpy arrays and tensors.

    The mask may omit the channel axis: ``H x W`` for ``H x W x C`` numpy
    frames, or ``N x 1 x H x W`` for ``N x C x H x W`` tensors.
    """
    if isinstance(frame, torch.Tensor):
        if mask.shape[-2:] != frame.shape[-2:] or (mask.dim() == frame.dim() and mask.shape[0] != frame.shape[0]):
            raise ValueError(f"mask shape {tuple(mask.shape)} does not match frame {tuple(frame.shape)}")
        return torch.where(mask.bool(), torch.zeros_like(frame), frame)
    frame = np.asarray(frame)
    mask = np.asarray(mask)
    if mask.shape != frame.shape[: mask.ndim]:
        raise ValueError(f"mask shape {mask.shape} does not match frame {frame.shape}")
    hole = mask.astype(bool)
    if frame.ndim > mask.ndim:
        hole = hole.reshape(hole.shape + (1,) * (frame.ndim - mask.ndim))
    return np.where(hole, np.zeros_like(frame), frame)


def check_size(size: int, levels: int) -> None:
    if size <= 0 or size % (2 ** levels):
        raise ValueError(f"image size {size} must be a positive multiple of 2^{levels}")
