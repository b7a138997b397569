"""Glue between generated/pooled data and models.

Turns synthetic samples (in memory, or a manifest plus pooled index on
disk) into :class:`~hpnet.train.FeatureSet` objects, and builds models
with their label text features.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from . import fpm, hpt, synthgen, topology, trmm
from .model import Model, ModelConfig
from .numerics import DTYPE
from .train import FeatureSet


def pose_features(poses: np.ndarray, grid_hw: Tuple[int, int]) -> np.ndarray:
    """Integer decoded poses ``[T, n, 2]`` -> centred coordinates in [-0.5, 0.5)."""
    h, w = grid_hw
    return (poses / np.array([w, h], dtype=np.float64) - 0.5).astype(DTYPE)


def build_features(cfg: synthgen.SynthConfig, pool_cfg: fpm.PoolConfig = fpm.PoolConfig(),
                   threads: int = 1) -> Dict[str, FeatureSet]:
    """Generate every sample, pool it, and return ``{"pooled": ..., "pose": ...}``.

    Heatmaps are dropped as soon as a sample is pooled.
    """
    mixing = synthgen.mixing_matrices(cfg)
    channels = synthgen.joint_channels(cfg)[pool_cfg.reference_scale_index]
    split = synthgen.split_of(cfg)
    pool_hw = cfg.scales[pool_cfg.pool_scale_index][:2]

    def one(item):
        sid, label = item
        s = synthgen.make_sample(sid, label, cfg, mixing)
        feats, poses = fpm.pool_sequence(s.heatmaps, pool_cfg, channels, return_poses=True)
        return feats, pose_features(poses, pool_hw), s.video_feature

    from .train import _map
    items = synthgen.sample_ids(cfg)
    results = _map(one, items, threads)
    ids = [sid for sid, _ in items]
    labels = np.array([lab for _, lab in items])
    splits = [split[sid] for sid in ids]
    videos = [r[2] for r in results]
    return {
        "pooled": FeatureSet(ids, labels, [r[0] for r in results], videos, splits),
        "pose": FeatureSet(ids, labels, [r[1] for r in results], videos, splits),
    }


def load_pooled(index_path, source: str = "pooled") -> Tuple[FeatureSet, synthgen.SynthConfig]:
    """Read a pooled index written by ``hpnet pool``."""
    index_path = Path(index_path)
    index = json.loads(index_path.read_text())
    base = index_path.parent
    manifest = (base / index["manifest"]).resolve()
    cfg, entries, mbase = synthgen.load_manifest(manifest)
    by_id = {e["id"]: e for e in entries}
    grid_hw = tuple(index["pool_grid"])
    ids, labels, seqs, videos, splits = [], [], [], [], []
    for rec in index["samples"]:
        entry = by_id[rec["id"]]
        ids.append(rec["id"])
        labels.append(entry["label"])
        splits.append(entry["split"])
        if source == "pooled":
            seqs.append(hpt.load(base / rec["pooled"]))
        elif source == "pose":
            seqs.append(pose_features(hpt.load(base / rec["poses"]), grid_hw))
        else:
            raise ValueError(f"unknown input source {source!r}")
        videos.append(hpt.load(mbase / entry["video_feature"]))
    return FeatureSet(ids, np.array(labels), seqs, videos, splits), cfg


def label_text(cfg: ModelConfig, embeddings: Optional[Tuple[str, str]] = None) -> np.ndarray:
    if embeddings is not None:
        emb, _ = trmm.load_label_embeddings(embeddings[0], embeddings[1], cfg.num_classes)
        return emb
    return trmm.encode_labels(synthgen.class_names(cfg.num_classes), cfg.text_dim, cfg.label_seed)


def make_model(cfg: ModelConfig, graph: Optional[topology.SkeletonGraph] = None,
               embeddings: Optional[Tuple[str, str]] = None) -> Model:
    graph = topology.coco17() if graph is None else graph
    text = label_text(cfg, embeddings) if cfg.kind == "hpnet" else None
    return Model(cfg, graph, text)
