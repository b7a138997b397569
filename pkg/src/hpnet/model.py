"""Full HP-Net forward/backward and the single-stream baselines.

Parameters live in one flat dictionary keyed by dotted paths, e.g.
``gcn.p.W0``, ``trmm.P3.W1``, ``fusion.align``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import fusion, smclm, topology, trmm
from .numerics import (DTYPE, Params, ShapeError, check_finite, cross_entropy,
                       cross_entropy_grad, nest, one_hot, sub)
from .topology import SkeletonGraph

MODALITIES = ("joint", "bone", "joint_motion", "bone_motion")


@dataclass
class ModelConfig:
    kind: str = "hpnet"                 # "hpnet" or "single"
    in_channels: int = 96
    gcn_channels: List[int] = field(default_factory=lambda: [96, 128, 128])
    num_classes: int = 5
    text_dim: int = 64
    video_dim: int = 64
    trmm_hidden: Optional[int] = None
    trmm_init_std: float = 0.02
    streams: List[str] = field(default_factory=lambda: list(smclm.STREAMS))
    modality: str = "joint"             # single-stream models only
    tau: float = 0.1
    label_seed: int = 0
    input_norm: bool = True             # standardise inputs with training-set statistics

    def __post_init__(self):
        if self.kind not in ("hpnet", "single"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if not self.streams or any(s not in smclm.STREAMS for s in self.streams):
            raise ValueError(f"streams must be a non-empty subset of {smclm.STREAMS}")
        if len(set(self.streams)) != len(self.streams):
            raise ValueError("duplicate stream")
        self.streams = [s for s in smclm.STREAMS if s in self.streams]
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def channels(self) -> List[int]:
        return [self.in_channels, *self.gcn_channels]

    def to_dict(self) -> dict:
        return asdict(self)


def fit_input_norm(seqs: Sequence[np.ndarray], floor: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    """Per-(joint, channel) mean and std over all samples and frames.

    Accumulated in float64 in sample order; the std is floored so constant
    inputs map to zero instead of dividing by zero.
    """
    if not seqs:
        raise ValueError("cannot fit input statistics on no samples")
    stacked = np.concatenate([np.asarray(s, dtype=np.float64) for s in seqs], axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), floor)
    return mean.astype(DTYPE), std.astype(DTYPE)


def init_params(cfg: ModelConfig, seed: int) -> Params:
    rng = np.random.default_rng(seed)
    if cfg.kind == "single":
        return nest("gcn.x", topology.init_gcn(rng, cfg.channels, cfg.num_classes))
    params = smclm.init_smclm(rng, cfg.channels, cfg.num_classes, cfg.streams)
    fc_dim = cfg.channels[-1] * len(cfg.streams)
    params.update(nest("trmm", trmm.init_trmm(rng, fc_dim, cfg.text_dim, cfg.trmm_hidden,
                                              std=cfg.trmm_init_std)))
    params["fusion.align"] = (rng.standard_normal((cfg.text_dim, cfg.video_dim))
                              / np.sqrt(cfg.video_dim)).astype(DTYPE)
    return params


class Model:
    """Binds a config to a skeleton graph, frozen label text features and
    (optionally) frozen input statistics ``norm = (mean, std)``."""

    def __init__(self, cfg: ModelConfig, graph: SkeletonGraph,
                 text: Optional[np.ndarray] = None,
                 norm: Optional[Tuple[np.ndarray, np.ndarray]] = None):
        self.cfg = cfg
        self.norm = None
        if norm is not None:
            self.set_norm(*norm)
        self.graph = graph
        self.a_hat = topology.normalize_adjacency(graph.adjacency())
        if cfg.kind == "hpnet":
            if text is None:
                raise ValueError("the fused model needs label text features")
            if text.shape != (cfg.num_classes, cfg.text_dim):
                raise ShapeError(f"text features {text.shape} do not match "
                                 f"({cfg.num_classes}, {cfg.text_dim})")
        self.text = text

    def astype(self, dtype) -> "Model":
        """Copy of the model whose constants use ``dtype``."""
        m = Model.__new__(Model)
        m.cfg, m.graph = self.cfg, self.graph
        m.a_hat = self.a_hat.astype(dtype)
        m.text = None if self.text is None else self.text.astype(dtype)
        m.norm = None if self.norm is None else tuple(a.astype(dtype) for a in self.norm)
        return m

    def set_norm(self, mean: np.ndarray, std: np.ndarray) -> None:
        mean, std = np.asarray(mean), np.asarray(std)
        if mean.shape != std.shape or mean.ndim != 2 or mean.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"input statistics {mean.shape}/{std.shape} do not match "
                             f"[n, {self.cfg.in_channels}]")
        if not np.all(std > 0):
            raise ValueError("input std must be positive")
        self.norm = (mean, std)

    def _input(self, seq: np.ndarray) -> np.ndarray:
        if self.norm is None:
            return seq
        mean, std = self.norm
        if seq.shape[1:] != mean.shape:
            raise ShapeError(f"sequence {seq.shape} does not match input statistics {mean.shape}")
        return ((seq - mean) / std).astype(seq.dtype, copy=False)

    # -- single stream -------------------------------------------------------

    def _modality(self, x: np.ndarray) -> np.ndarray:
        mod = self.cfg.modality
        if mod in ("bone", "bone_motion"):
            x = smclm.spatial_transform(x, self.graph)
        if mod in ("joint_motion", "bone_motion"):
            x = smclm.motion_transform(x)
        return x

    # -- public --------------------------------------------------------------

    def forward(self, params: Params, seq: np.ndarray, video: Optional[np.ndarray] = None):
        """Return ``(scores, stream_logits, cache)`` for one sample.

        For single-stream models ``scores`` are the head logits and
        ``stream_logits`` is empty.
        """
        seq = self._input(seq)
        if self.cfg.kind == "single":
            logits, cache = topology.gcn_forward(self._modality(seq), self.a_hat,
                                                 sub(params, "gcn.x"))
            return check_finite(logits, "logits"), {}, cache
        bundle = smclm.co_learn(seq, self.graph, self.a_hat, params, self.cfg.streams)
        refined, tcache = trmm.trmm_forward(bundle.fc, self.text, sub(params, "trmm"))
        scores, fcache = fusion.fuse_scores(refined, video, params["fusion.align"], self.cfg.tau)
        return check_finite(scores, "scores"), bundle.logits, (bundle, tcache, fcache)

    def features(self, params: Params, seq: np.ndarray) -> np.ndarray:
        """Concatenated co-learned descriptor F_c (or the pooled GCN feature)."""
        seq = self._input(seq)
        if self.cfg.kind == "single":
            feat, _ = topology.gcn_features(self._modality(seq), self.a_hat, sub(params, "gcn.x"))
            return feat
        return smclm.co_learn(seq, self.graph, self.a_hat, params, self.cfg.streams).fc

    def loss(self, params: Params, seq: np.ndarray, video: Optional[np.ndarray], label: int,
             weights: fusion.LossWeights = fusion.LossWeights()) -> float:
        scores, logits, _ = self.forward(params, seq, video)
        y = one_hot(label, self.cfg.num_classes, dtype=scores.dtype)
        if self.cfg.kind == "single":
            return cross_entropy(scores, y)
        return fusion.total_loss(scores, logits, y, weights)

    def loss_and_grads(self, params: Params, seq: np.ndarray, video: Optional[np.ndarray],
                       label: int, weights: fusion.LossWeights = fusion.LossWeights()):
        scores, logits, cache = self.forward(params, seq, video)
        y = one_hot(label, self.cfg.num_classes, dtype=scores.dtype)
        if self.cfg.kind == "single":
            g, _ = topology.gcn_backward(sub(params, "gcn.x"), self.a_hat, cache,
                                         dlogits=cross_entropy_grad(scores, y))
            return cross_entropy(scores, y), nest("gcn.x", g), scores

        loss = fusion.total_loss(scores, logits, y, weights)
        dscores, dlogits = fusion.total_loss_grads(scores, logits, y, weights)
        bundle, tcache, fcache = cache
        d_align, dtext = fusion.fuse_scores_backward(fcache, dscores)
        tgrads, dfc = trmm.trmm_backward(sub(params, "trmm"), tcache, dtext)
        sgrads, _ = smclm.co_learn_backward(bundle, self.graph, self.a_hat, params, dfc, dlogits)
        grads = dict(sgrads)
        grads.update(nest("trmm", tgrads))
        grads["fusion.align"] = d_align
        return loss, grads, scores
