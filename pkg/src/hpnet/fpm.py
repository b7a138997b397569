"""Feedback pooling: decode joints by argmax, then pool every heatmap
channel in an R x R window around each decoded joint."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .numerics import ShapeError

REDUCERS = ("mean", "max")


@dataclass(frozen=True)
class PoolConfig:
    region: int = 1
    reducer: str = "mean"
    reference_scale_index: int = 0
    pool_scale_index: int = 1

    def __post_init__(self):
        if self.region < 1 or self.region % 2 == 0:
            raise ValueError("pooling region must be a positive odd integer")
        if self.reducer not in REDUCERS:
            raise ValueError(f"reducer must be one of {REDUCERS}")
        if self.reference_scale_index < 0 or self.pool_scale_index < 0:
            raise ValueError("scale indices must be non-negative")


def extract_pose(heatmap: np.ndarray, channels: Sequence[int]) -> np.ndarray:
    """Argmax coordinates ``[n, 2]`` (x, y) of the given channels.

    Ties resolve to the smallest row-major index (``np.argmax`` semantics).
    """
    if heatmap.ndim != 3 or heatmap.size == 0:
        raise ShapeError(f"heatmap must be a non-empty [c, h, w] array, got {heatmap.shape}")
    c, h, w = heatmap.shape
    channels = np.asarray(channels, dtype=np.int64)
    if channels.size == 0 or np.any(channels < 0) or np.any(channels >= c):
        raise IndexError(f"joint channel indices must lie in [0, {c})")
    flat = np.argmax(heatmap[channels].reshape(len(channels), -1), axis=1)
    ys, xs = np.divmod(flat, w)
    return np.stack([xs, ys], axis=1)


def rescale_pose(pose: np.ndarray, from_hw: Tuple[int, int], to_hw: Tuple[int, int]) -> np.ndarray:
    """Map integer (x, y) between grids: round half up of ``x * w_to / w_from``,
    clamped into the target grid."""
    (fh, fw), (th, tw) = from_hw, to_hw
    if min(th, tw, fh, fw) <= 0:
        raise ValueError("grid dimensions must be positive")
    pose = np.asarray(pose, dtype=np.int64)
    # exact rational rounding: floor((2 x w_to + w_from) / (2 w_from))
    x = (2 * pose[:, 0] * tw + fw) // (2 * fw)
    y = (2 * pose[:, 1] * th + fh) // (2 * fh)
    return np.stack([np.clip(x, 0, tw - 1), np.clip(y, 0, th - 1)], axis=1)


def feedback_pool(heatmap: np.ndarray, pose: np.ndarray, cfg: PoolConfig = PoolConfig()) -> np.ndarray:
    """Pooled features ``[n, c]`` from windows centred on ``pose``.

    Windows are clipped at the borders; the mean divides by the number of
    pixels actually covered.
    """
    if heatmap.ndim != 3:
        raise ShapeError(f"heatmap must be [c, h, w], got {heatmap.shape}")
    c, h, w = heatmap.shape
    pose = np.asarray(pose)
    if pose.ndim != 2 or pose.shape[1] != 2:
        raise ShapeError(f"pose must be [n, 2], got {pose.shape}")
    xs, ys = pose[:, 0], pose[:, 1]
    if np.any(xs < 0) or np.any(xs >= w) or np.any(ys < 0) or np.any(ys >= h):
        raise ValueError("pose coordinate outside the heatmap")
    if cfg.region == 1:
        return heatmap[:, ys, xs].T.copy()
    r = cfg.region // 2
    out = np.empty((len(pose), c), dtype=heatmap.dtype)
    for j, (x, y) in enumerate(zip(xs, ys)):
        win = heatmap[:, max(y - r, 0):min(y + r + 1, h), max(x - r, 0):min(x + r + 1, w)]
        win = win.reshape(c, -1)
        out[j] = win.mean(axis=1) if cfg.reducer == "mean" else win.max(axis=1)
    return out


def _check_stacks(stacks: Sequence[Sequence[np.ndarray]]) -> List[Tuple[int, ...]]:
    if not stacks:
        raise ShapeError("empty heatmap sequence")
    shapes = [hm.shape for hm in stacks[0]]
    for t, stack in enumerate(stacks):
        if [hm.shape for hm in stack] != shapes:
            raise ShapeError(f"frame {t} scale geometry differs from frame 0")
    return shapes


def pool_sequence(stacks: Sequence[Sequence[np.ndarray]], cfg: PoolConfig,
                  joint_channels: Sequence[int], return_poses: bool = False):
    """Pool a clip: ``[T, n, c]`` features (and ``[T, n, 2]`` poses decoded on
    the reference scale, expressed in the pooling scale's grid)."""
    shapes = _check_stacks(stacks)
    if cfg.reference_scale_index >= len(shapes) or cfg.pool_scale_index >= len(shapes):
        raise IndexError("scale index beyond the available scales")
    ref_hw = shapes[cfg.reference_scale_index][1:]
    pool_hw = shapes[cfg.pool_scale_index][1:]
    feats, poses = [], []
    for stack in stacks:
        pose = extract_pose(stack[cfg.reference_scale_index], joint_channels)
        pose = rescale_pose(pose, ref_hw, pool_hw)
        feats.append(feedback_pool(stack[cfg.pool_scale_index], pose, cfg))
        poses.append(pose)
    out = np.stack(feats)
    if return_poses:
        return out, np.stack(poses)
    return out
