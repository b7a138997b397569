"""Text-video score fusion and the composite training loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .numerics import NumericalError, ShapeError, cross_entropy, cross_entropy_grad


@dataclass(frozen=True)
class LossWeights:
    p: float = 1.0
    s: float = 1.0
    m: float = 1.0

    def __post_init__(self):
        for name in ("p", "s", "m"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")

    def get(self, stream: str) -> float:
        return getattr(self, stream)


def _normalize(v: np.ndarray, axis: int = -1):
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm == 0):
        raise NumericalError("cannot normalize a zero-norm vector")
    return v / norm, norm


def align(video: np.ndarray, align_w: np.ndarray) -> np.ndarray:
    if video.shape != (align_w.shape[1],):
        raise ShapeError(f"video feature length {video.shape} does not match map {align_w.shape}")
    return align_w @ video


def fuse_scores(text: np.ndarray, video: np.ndarray, align_w: np.ndarray, tau: float):
    """Per-class scaled cosine scores ``S_i = <v, t_i> / tau``.

    ``v`` is the aligned, unit-normalized video feature and ``t_i`` the
    unit-normalized refined text row of class ``i``. Returns
    ``(scores, cache)``.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    a = align(video, align_w)
    if text.ndim != 2 or text.shape[1] != a.shape[0]:
        raise ShapeError(f"text features {text.shape} do not match aligned width {a.shape}")
    v, vnorm = _normalize(a)
    t, tnorm = _normalize(text, axis=1)
    scores = (t @ v) / tau
    return scores.astype(text.dtype, copy=False), (video, v, vnorm, t, tnorm, tau)


def fuse_scores_backward(cache, dscores: np.ndarray):
    """Return ``(d_align_w, d_text)``."""
    video, v, vnorm, t, tnorm, tau = cache
    dt = np.outer(dscores, v) / tau
    dv = (t.T @ dscores) / tau
    da = (dv - v * np.dot(v, dv)) / vnorm
    dtext = (dt - t * np.sum(t * dt, axis=1, keepdims=True)) / tnorm
    return np.outer(da, video), dtext


def total_loss(scores: np.ndarray, stream_logits: Mapping[str, np.ndarray],
               onehot: np.ndarray, weights: LossWeights = LossWeights()) -> float:
    """Fused cross-entropy plus the weighted auxiliary stream losses."""
    loss = cross_entropy(scores, onehot)
    for s, logits in stream_logits.items():
        if logits.shape != scores.shape:
            raise ShapeError(f"stream {s} logits {logits.shape} vs scores {scores.shape}")
        loss += weights.get(s) * cross_entropy(logits, onehot)
    return loss


def total_loss_grads(scores: np.ndarray, stream_logits: Mapping[str, np.ndarray],
                     onehot: np.ndarray, weights: LossWeights = LossWeights()):
    dscores = cross_entropy_grad(scores, onehot)
    dlogits = {s: weights.get(s) * cross_entropy_grad(l, onehot)
               for s, l in stream_logits.items()}
    return dscores, dlogits
