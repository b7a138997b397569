"""Spatial-motion co-learning.

Pooled features are turned into a bone stream (child minus parent) and a
motion stream (next frame minus current frame). Each stream is modelled
by its own graph-conv stack. The pooled per-stream features are
concatenated in the order (p, s, m).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from . import topology
from .numerics import Params, ShapeError, nest, sub
from .topology import SkeletonGraph

STREAMS = ("p", "s", "m")


def spatial_transform(fp: np.ndarray, graph: SkeletonGraph) -> np.ndarray:
    """``F_s[t, j] = F_p[t, j] - F_p[t, parent(j)]``; the root row is zero."""
    if fp.ndim != 3 or fp.shape[1] != graph.n:
        raise ShapeError(f"expected [T, {graph.n}, c], got {fp.shape}")
    parent = np.asarray(graph.parent)
    return fp - fp[:, parent, :]


def spatial_transform_backward(dfs: np.ndarray, graph: SkeletonGraph) -> np.ndarray:
    dfp = dfs.copy()
    for j, p in enumerate(graph.parent):
        # the root row is F_p[root] - F_p[root]: no dependence at all
        dfp[:, p, :] -= dfs[:, j, :]
    return dfp


def motion_transform(fp: np.ndarray) -> np.ndarray:
    """``F_m[t] = F_p[t+1] - F_p[t]``; the final frame is zero."""
    if fp.ndim != 3 or fp.shape[0] < 1:
        raise ShapeError(f"expected [T, n, c] with T >= 1, got {fp.shape}")
    fm = np.zeros_like(fp)
    fm[:-1] = fp[1:] - fp[:-1]
    return fm


def motion_transform_backward(dfm: np.ndarray) -> np.ndarray:
    dfp = np.zeros_like(dfm)
    dfp[1:] += dfm[:-1]
    dfp[:-1] -= dfm[:-1]
    return dfp


def stream_inputs(fp: np.ndarray, graph: SkeletonGraph) -> Dict[str, np.ndarray]:
    return {"p": fp, "s": spatial_transform(fp, graph), "m": motion_transform(fp)}


@dataclass
class StreamBundle:
    inputs: Dict[str, np.ndarray]
    features: Dict[str, np.ndarray]
    logits: Dict[str, np.ndarray]
    fc: np.ndarray
    streams: Sequence[str]
    caches: Dict[str, topology.GcnCache] = field(repr=False, default_factory=dict)


def init_smclm(rng: np.random.Generator, channels: Sequence[int], num_classes: int,
               streams: Sequence[str] = STREAMS) -> Params:
    params: Params = {}
    for s in streams:
        params.update(nest(f"gcn.{s}", topology.init_gcn(rng, channels, num_classes)))
    return params


def co_learn(fp: np.ndarray, graph: SkeletonGraph, a_hat: np.ndarray, params: Params,
             streams: Sequence[str] = STREAMS) -> StreamBundle:
    """Run one independent GCN per stream and concatenate their features.

    ``params`` holds the stream stacks under ``gcn.p``, ``gcn.s``, ``gcn.m``.
    """
    inputs = stream_inputs(fp, graph)
    feats, logits, caches = {}, {}, {}
    for s in streams:
        p = sub(params, f"gcn.{s}")
        feats[s], caches[s] = topology.gcn_features(inputs[s], a_hat, p)
        logits[s] = topology.head_forward(p, feats[s])
    fc = np.concatenate([feats[s] for s in streams])
    return StreamBundle({s: inputs[s] for s in streams}, feats, logits, fc, tuple(streams), caches)


def co_learn_backward(bundle: StreamBundle, graph: SkeletonGraph, a_hat: np.ndarray,
                      params: Params, dfc: Optional[np.ndarray],
                      dlogits: Dict[str, np.ndarray], need_input_grad: bool = False):
    """Gradients of all stream parameters given the gradient on ``F_c`` and
    on each stream's logits. Optionally also returns ``dF_p``."""
    grads: Params = {}
    offset = 0
    dfp = None
    for s in bundle.streams:
        p = sub(params, f"gcn.{s}")
        width = bundle.features[s].shape[0]
        dfeat = None if dfc is None else dfc[offset:offset + width]
        offset += width
        g, dseq = topology.gcn_backward(p, a_hat, bundle.caches[s],
                                        dlogits=dlogits.get(s), dfeature=dfeat)
        grads.update(nest(f"gcn.{s}", g))
        if need_input_grad:
            if s == "s":
                dseq = spatial_transform_backward(dseq, graph)
            elif s == "m":
                dseq = motion_transform_backward(dseq)
            dfp = dseq if dfp is None else dfp + dseq
    return grads, dfp
