"""AdamW training loop, evaluation metrics, score dumps and late fusion."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .fusion import LossWeights
from .model import Model, fit_input_norm, init_params
from .numerics import NumericalError, Params, softmax

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-3
    weight_decay: float = 1e-2
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ValueError("betas must be two values in [0, 1)")


class AdamW:
    """Adam with decoupled weight decay: ``p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)``."""

    def __init__(self, params: Params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        self.lr, self.eps, self.wd = lr, eps, weight_decay
        self.b1, self.b2 = betas
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k in sorted(params):
            p, g = params[k], grads[k].astype(params[k].dtype, copy=False)
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.wd:
                update = update + self.wd * p
            p -= (self.lr * update).astype(p.dtype, copy=False)


@dataclass
class FeatureSet:
    """In-memory samples ready for a model: one sequence per sample."""
    ids: List[str]
    labels: np.ndarray
    seqs: List[np.ndarray]
    videos: Optional[List[np.ndarray]]
    splits: List[str]

    def select(self, split: str) -> "FeatureSet":
        idx = [i for i, s in enumerate(self.splits) if s == split]
        if not idx:
            raise ValueError(f"split {split!r} is empty")
        return FeatureSet([self.ids[i] for i in idx], self.labels[idx],
                          [self.seqs[i] for i in idx],
                          None if self.videos is None else [self.videos[i] for i in idx],
                          [split] * len(idx))

    def __len__(self) -> int:
        return len(self.ids)

    def video(self, i: int):
        return None if self.videos is None else self.videos[i]


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def train(model: Model, data: FeatureSet, tcfg: TrainConfig,
          weights: LossWeights = LossWeights(), init_seed: Optional[int] = None,
          threads: int = 1, params: Optional[Params] = None):
    """Train from a seeded initialisation. Returns ``(params, epoch_log)``.

    Shuffling uses ``tcfg.seed``; batch gradients are summed in sample order
    and averaged, so results do not depend on ``threads``. If the model wants
    input standardisation and has no statistics yet, they are fitted on
    ``data`` first.
    """
    if model.cfg.input_norm and model.norm is None:
        model.set_norm(*fit_input_norm(data.seqs))
    if params is None:
        params = init_params(model.cfg, tcfg.seed if init_seed is None else init_seed)
    opt = AdamW(params, tcfg.lr, tcfg.betas, tcfg.eps, tcfg.weight_decay)
    rng = np.random.default_rng(tcfg.seed)
    history = []
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(data))
        total, correct = 0.0, 0
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start:start + tcfg.batch_size]

            def one(i):
                return model.loss_and_grads(params, data.seqs[i], data.video(i),
                                            int(data.labels[i]), weights)

            results = _map(one, batch, threads)
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            for (loss, g, scores), i in zip(results, batch):
                if not np.isfinite(loss):
                    raise NumericalError(f"non-finite loss at epoch {epoch}, sample {data.ids[i]}")
                total += loss
                correct += int(np.argmax(scores) == data.labels[i])
                for k, v in g.items():
                    grads[k] += v
            for k in grads:
                grads[k] /= len(batch)
            opt.step(params, grads)
        entry = {"epoch": epoch + 1, "loss": total / len(data), "train_top1": correct / len(data)}
        log.info("epoch %d loss %.4f train top-1 %.3f", entry["epoch"], entry["loss"], entry["train_top1"])
        history.append(entry)
    return params, history


# --------------------------------------------------------------------------
# Metrics and score dumps


def metrics_from_predictions(labels: Sequence[int], preds: Sequence[int]) -> dict:
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    if labels.size == 0:
        raise ValueError("cannot compute metrics on an empty split")
    per_class = {}
    for c in sorted(set(labels.tolist())):
        mask = labels == c
        per_class[int(c)] = float(np.mean(preds[mask] == c))
    return {
        "top1": float(np.mean(preds == labels)),
        "mean_per_class": float(np.mean(list(per_class.values()))),
        "per_class": per_class,
    }


def predict_scores(model: Model, params: Params, data: FeatureSet, threads: int = 1) -> np.ndarray:
    def one(i):
        scores, _, _ = model.forward(params, data.seqs[i], data.video(i))
        return scores
    return np.stack(_map(one, range(len(data)), threads))


def evaluate(model: Model, params: Params, data: FeatureSet, threads: int = 1):
    """Return ``(metrics, dump)`` where ``dump`` is a list of score records."""
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty split")
    scores = predict_scores(model, params, data, threads)
    metrics = metrics_from_predictions(data.labels, np.argmax(scores, axis=1))
    dump = [{"id": sid, "label": int(lab), "scores": [float(v) for v in s]}
            for sid, lab, s in zip(data.ids, data.labels, scores.astype(np.float32))]
    return metrics, dump


def write_dump(path, dump: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for rec in dump:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_dump(path) -> List[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def ensemble(dumps: Sequence[Sequence[dict]], weights: Optional[Sequence[float]] = None):
    """Late fusion: per sample ``sum_k w_k softmax(scores_k)``.

    Returns ``(metrics, fused_dump)``.
    """
    if not dumps:
        raise ValueError("need at least one score dump")
    weights = [1.0] * len(dumps) if weights is None else list(weights)
    if len(weights) != len(dumps) or not all(np.isfinite(weights)):
        raise ValueError("one finite weight per dump is required")
    ref = [(r["id"], r["label"]) for r in dumps[0]]
    ref_ids = sorted(i for i, _ in ref)
    tables = []
    for d in dumps:
        table = {r["id"]: r for r in d}
        if sorted(table) != ref_ids or len(table) != len(d):
            raise ValueError("score dumps do not cover identical sample ids")
        tables.append(table)
    fused, labels = [], []
    for sid, label in ref:
        acc = None
        for w, table in zip(weights, tables):
            rec = table[sid]
            if rec["label"] != label:
                raise ValueError(f"label mismatch for sample {sid}")
            p = w * softmax(np.asarray(rec["scores"], dtype=np.float64))
            acc = p if acc is None else acc + p
        fused.append(acc)
        labels.append(label)
    fused = np.asarray(fused)
    metrics = metrics_from_predictions(labels, np.argmax(fused, axis=1))
    out = [{"id": sid, "label": lab, "scores": [float(v) for v in s]}
           for (sid, lab), s in zip(ref, fused)]
    return metrics, out
