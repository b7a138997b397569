"""Skeleton graph and the degree-normalized graph convolution stack.

Each layer computes ``relu(A_hat @ F @ W)`` frame by frame, with
``A_hat = D^-1/2 (A + I) D^-1/2``. After the last layer the features are
averaged over frames and joints, and a linear head produces class logits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .numerics import DTYPE, Params, ShapeError, check_finite, relu

COCO17_JOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

# (parent, child); rooted at the nose so every joint has one parent.
COCO17_EDGES = (
    (0, 1), (0, 2), (1, 3), (2, 4),
    (0, 5), (0, 6), (5, 7), (7, 9), (6, 8), (8, 10),
    (5, 11), (6, 12), (11, 13), (13, 15), (12, 14), (14, 16),
)


@dataclass(frozen=True)
class SkeletonGraph:
    n: int
    edges: Tuple[Tuple[int, int], ...]
    parent: Tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("skeleton needs at least one joint")
        parent = list(range(self.n))
        seen = set()
        for p, c in self.edges:
            if not (0 <= p < self.n and 0 <= c < self.n) or p == c:
                raise ValueError(f"invalid edge ({p}, {c}) for {self.n} joints")
            if c in seen:
                raise ValueError(f"joint {c} has more than one parent")
            seen.add(c)
            parent[c] = p
        object.__setattr__(self, "parent", tuple(parent))
        if not self.is_tree():
            raise ValueError("edge list must form a connected tree")

    def is_tree(self) -> bool:
        if len(self.edges) != self.n - 1:
            return False
        roots = [j for j in range(self.n) if self.parent[j] == j]
        if len(roots) != 1:
            return False
        for j in range(self.n):
            k, steps = j, 0
            while self.parent[k] != k:
                k = self.parent[k]
                steps += 1
                if steps > self.n:
                    return False
        return True

    @property
    def root(self) -> int:
        return next(j for j in range(self.n) if self.parent[j] == j)

    def adjacency(self, self_loops: bool = True, dtype=DTYPE) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=dtype)
        for p, c in self.edges:
            a[p, c] = a[c, p] = 1
        if self_loops:
            np.fill_diagonal(a, 1)
        return a

    @classmethod
    def from_json(cls, text: str, n: Optional[int] = None) -> "SkeletonGraph":
        pairs = [tuple(int(v) for v in e) for e in json.loads(text)]
        if n is None:
            n = 1 + max(max(e) for e in pairs)
        return cls(n, tuple(pairs))


def coco17() -> SkeletonGraph:
    return SkeletonGraph(17, COCO17_EDGES)


def load_skeleton(path: Optional[str] = None) -> SkeletonGraph:
    """Load a skeleton edge list; ``None`` gives the packaged COCO-17 file."""
    if path is None:
        text = resources.files("hpnet").joinpath("data/coco17.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return SkeletonGraph.from_json(text)


def normalize_adjacency(adj: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization ``D^-1/2 A D^-1/2`` of an adjacency that
    already carries self-loops."""
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ShapeError(f"adjacency must be square, got {adj.shape}")
    deg = adj.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError("zero-degree node in adjacency")
    inv_sqrt = (1.0 / np.sqrt(deg)).astype(adj.dtype)
    return (inv_sqrt[:, None] * adj * inv_sqrt[None, :]).astype(adj.dtype)


def _neighbours(a_hat: np.ndarray):
    """Per row, the nonzero column indices and coefficients, zero-padded."""
    rows = [np.flatnonzero(r) for r in a_hat]
    width = max(len(r) for r in rows)
    idx = np.zeros((len(rows), width), dtype=np.int64)
    coef = np.zeros((len(rows), width), dtype=a_hat.dtype)
    for i, r in enumerate(rows):
        idx[i, :len(r)] = r
        coef[i, :len(r)] = a_hat[i, r]
    return idx, coef


def propagate(a_hat: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """``A_hat @ F`` over the joint axis (``feats`` is ``[..., n, c]``).

    Each output entry sums its neighbour terms sorted by value, so the
    result depends only on the set of terms: relabelling the joints
    permutes the output exactly.
    """
    n = a_hat.shape[0]
    if a_hat.shape != (n, n) or feats.shape[-2] != n:
        raise ShapeError(f"features {feats.shape} do not match adjacency {a_hat.shape}")
    idx, coef = _neighbours(a_hat)
    lanes = [coef[:, k, None] * feats[..., idx[:, k], :] for k in range(idx.shape[1])]
    # odd-even transposition sort across the lanes (elementwise min/max)
    d = len(lanes)
    for r in range(d):
        for i in range(r % 2, d - 1, 2):
            lanes[i], lanes[i + 1] = np.minimum(lanes[i], lanes[i + 1]), np.maximum(lanes[i], lanes[i + 1])
    out = lanes[0].copy()
    for lane in lanes[1:]:
        out += lane
    return out


def graph_conv(feats: np.ndarray, a_hat: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """``relu(A_hat @ F @ W)``; ``feats`` may carry leading frame axes."""
    if feats.shape[-1] != weight.shape[0]:
        raise ShapeError(f"features {feats.shape} do not chain with weight {weight.shape}")
    return relu(np.matmul(propagate(a_hat, feats), weight))


# --------------------------------------------------------------------------
# Parameters and the stack


def init_gcn(rng: np.random.Generator, channels: Sequence[int], num_classes: int,
             dtype=DTYPE) -> Params:
    """He-initialised layer weights ``W{l}`` plus a head ``head.W``/``head.b``."""
    p: Params = {}
    for l, (c_in, c_out) in enumerate(zip(channels[:-1], channels[1:])):
        p[f"W{l}"] = (rng.standard_normal((c_in, c_out)) * np.sqrt(2.0 / c_in)).astype(dtype)
    c_last = channels[-1]
    p["head.W"] = (rng.standard_normal((num_classes, c_last)) / np.sqrt(c_last)).astype(dtype)
    p["head.b"] = np.zeros(num_classes, dtype=dtype)
    return p


def num_layers(p: Params) -> int:
    return sum(1 for k in p if k.startswith("W") and k[1:].isdigit())


@dataclass
class GcnCache:
    inputs: List[np.ndarray]      # per layer input F^l
    propagated: List[np.ndarray]  # per layer A_hat @ F^l
    pre: List[np.ndarray]         # per layer pre-activation
    feature: np.ndarray           # pooled feature after the last layer
    out_shape: Tuple[int, ...]    # shape of the last layer output


def gcn_features(seq: np.ndarray, a_hat: np.ndarray, p: Params):
    """Run the graph-conv layers and average over (T, n).

    Returns ``(feature, cache)`` where ``feature`` has the last layer width.
    """
    if seq.ndim != 3:
        raise ShapeError(f"sequence must be [T, n, c], got {seq.shape}")
    h = seq
    cache = GcnCache([], [], [], None, seq.shape)
    for l in range(num_layers(p)):
        w = p[f"W{l}"]
        if h.shape[-1] != w.shape[0]:
            raise ShapeError(f"layer {l} expects {w.shape[0]} channels, got {h.shape[-1]}")
        prop = propagate(a_hat, h)
        pre = np.matmul(prop, w)
        cache.inputs.append(h)
        cache.propagated.append(prop)
        cache.pre.append(pre)
        h = relu(pre)
    feature = h.mean(axis=(0, 1))
    cache.feature = feature
    cache.out_shape = h.shape
    return check_finite(feature, "gcn feature"), cache


def head_forward(p: Params, feature: np.ndarray) -> np.ndarray:
    return p["head.W"] @ feature + p["head.b"]


def gcn_forward(seq: np.ndarray, a_hat: np.ndarray, p: Params):
    """Logits for one sequence, plus the cache needed by :func:`gcn_backward`."""
    feature, cache = gcn_features(seq, a_hat, p)
    return head_forward(p, feature), cache


def gcn_backward(p: Params, a_hat: np.ndarray, cache: Optional[GcnCache],
                 dlogits: Optional[np.ndarray] = None,
                 dfeature: Optional[np.ndarray] = None):
    """Backpropagate through head and layers.

    ``dlogits`` is the gradient arriving at the head output and ``dfeature``
    any extra gradient arriving directly at the pooled feature (e.g. from a
    concatenation downstream). Returns ``(param_grads, dseq)``.
    """
    if cache is None or cache.feature is None:
        raise ValueError("gcn_backward needs the cache from a forward pass")
    grads: Params = {}
    feat = cache.feature
    dfeat = np.zeros_like(feat) if dfeature is None else dfeature.astype(feat.dtype, copy=True)
    if dlogits is None:
        dlogits = np.zeros_like(p["head.b"])
    grads["head.W"] = np.outer(dlogits, feat)
    grads["head.b"] = dlogits.copy()
    dfeat = dfeat + p["head.W"].T @ dlogits

    shape = cache.out_shape
    dh = np.broadcast_to(dfeat / (shape[0] * shape[1]), shape).astype(feat.dtype)
    for l in reversed(range(len(cache.pre))):
        dpre = dh * (cache.pre[l] > 0)
        c_in = cache.propagated[l].shape[-1]
        grads[f"W{l}"] = cache.propagated[l].reshape(-1, c_in).T @ dpre.reshape(-1, dpre.shape[-1])
        dprop = np.matmul(dpre, p[f"W{l}"].T)
        dh = np.matmul(a_hat.T, dprop)
    return grads, dh
