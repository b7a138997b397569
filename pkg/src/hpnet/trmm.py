"""Text refinement modulation.

Class-label text features are conditioned on the co-learned descriptor
``F_c``. A linear bridge maps ``F_c`` to the text width ``C``; four
independent two-layer MLPs then produce

* a scale ``gamma = P1(x)`` and shift ``beta = P2(x)`` applied row-wise to
  the text features (``psi = gamma * F_text + beta``),
* a pairwise gate ``G[k, j] = tanh(s_k - s_j)`` with ``s = P3(x) - P4(x)``,
  contracted against ``x`` as ``eta_k = mean_j G[k, j] x_j``,

and the refined text features are ``F_text + psi + eta``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import hpt
from .numerics import (DTYPE, Params, ShapeError, check_finite, init_mlp, mlp_backward,
                       mlp_forward, nest, sub)

PROJECTIONS = ("P1", "P2", "P3", "P4")


class LabelError(ValueError):
    pass


def _label_seed(label: str, seed: int) -> int:
    digest = hashlib.sha256(f"{seed}\x00{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def encode_labels(labels: Sequence[str], dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic stand-in text encoder: one unit vector per label.

    Each row depends only on its label string and ``seed``.
    """
    if not labels:
        raise LabelError("at least one label is required")
    if any(not isinstance(l, str) or not l for l in labels):
        raise LabelError("labels must be non-empty strings")
    if len(set(labels)) != len(labels):
        raise LabelError("labels must be distinct")
    rows = []
    for label in labels:
        v = np.random.default_rng(_label_seed(label, seed)).standard_normal(dim)
        rows.append(v / np.linalg.norm(v))
    emb = np.asarray(rows, dtype=np.float64)
    gram = emb @ emb.T
    np.fill_diagonal(gram, 0)
    if len(labels) > 1 and np.max(gram) > 1 - 1e-6:
        raise LabelError("label embedding collision")
    return emb.astype(DTYPE)


def load_label_embeddings(path: str, labels_path: str, num_classes: int):
    """Load an ``[N, C]`` ``.hpt`` embedding file and its JSON label order."""
    import json

    emb = hpt.load(path)
    with open(labels_path) as fh:
        names = json.load(fh)
    if emb.ndim != 2 or emb.shape[0] != len(names):
        raise LabelError(f"embedding shape {emb.shape} does not match {len(names)} labels")
    if emb.shape[0] != num_classes:
        raise LabelError(f"embedding has {emb.shape[0]} rows, dataset has {num_classes} classes")
    if np.any(np.linalg.norm(emb, axis=1) == 0):
        raise LabelError("zero-norm label embedding row")
    return emb, list(names)


# --------------------------------------------------------------------------


def init_trmm(rng: np.random.Generator, fc_dim: int, text_dim: int,
              hidden: Optional[int] = None, std: float = 0.02) -> Params:
    """Bridge plus P1..P4; projection weights N(0, std), biases zero."""
    hidden = text_dim if hidden is None else hidden
    params: Params = {
        "bridge.W": (rng.standard_normal((text_dim, fc_dim)) / np.sqrt(fc_dim)).astype(DTYPE),
        "bridge.b": np.zeros(text_dim, dtype=DTYPE),
    }
    for name in PROJECTIONS:
        params.update(nest(name, init_mlp(rng, text_dim, hidden, text_dim, std=std)))
    return params


def bridge(fc: np.ndarray, params: Params) -> np.ndarray:
    w = params["bridge.W"]
    if fc.shape != (w.shape[1],):
        raise ShapeError(f"bridge expects F_c of length {w.shape[1]}, got {fc.shape}")
    return w @ fc + params["bridge.b"]


def modulate(x: np.ndarray, text: np.ndarray, params: Params):
    """``psi = gamma * text + beta`` with ``gamma = P1(x)``, ``beta = P2(x)``."""
    if text.ndim != 2 or text.shape[1] != x.shape[0]:
        raise ShapeError(f"text features {text.shape} do not match width {x.shape[0]}")
    gamma, c1 = mlp_forward(sub(params, "P1"), x)
    beta, c2 = mlp_forward(sub(params, "P2"), x)
    psi = gamma[None, :] * text + beta[None, :]
    return psi, (gamma, beta, c1, c2)


def gate(s: np.ndarray) -> np.ndarray:
    """Antisymmetric pairwise gate ``tanh(s_k - s_j)``."""
    return np.tanh(s[:, None] - s[None, :])


def refine(x: np.ndarray, params: Params):
    """``eta_k = (1/C) sum_j tanh(s_k - s_j) x_j`` with ``s = P3(x) - P4(x)``."""
    u, c3 = mlp_forward(sub(params, "P3"), x)
    v, c4 = mlp_forward(sub(params, "P4"), x)
    s = u - v
    g = gate(s)
    eta = (g @ x) / x.shape[0]
    return eta, (g, c3, c4)


def aggregate(text: np.ndarray, psi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    if psi.shape != text.shape or eta.shape != (text.shape[1],):
        raise ShapeError(f"cannot aggregate {text.shape}, {psi.shape}, {eta.shape}")
    return check_finite(text + psi + eta[None, :], "refined text features")


@dataclass
class TrmmCache:
    fc: np.ndarray
    x: np.ndarray
    text: np.ndarray
    mod: tuple
    ref: tuple


def trmm_forward(fc: np.ndarray, text: np.ndarray, params: Params):
    x = bridge(fc, params)
    psi, mod = modulate(x, text, params)
    eta, ref = refine(x, params)
    return aggregate(text, psi, eta), TrmmCache(fc, x, text, mod, ref)


def trmm_backward(params: Params, cache: TrmmCache, dout: np.ndarray):
    """Return ``(param_grads, dF_c)`` given ``dF'_text``. Text features are
    frozen, so no gradient is produced for them."""
    x, text = cache.x, cache.text
    gamma, beta, c1, c2 = cache.mod
    g, c3, c4 = cache.ref
    C = x.shape[0]
    grads: Params = {}

    # psi branch
    dgamma = np.sum(dout * text, axis=0)
    dbeta = np.sum(dout, axis=0)
    g1, dx1 = mlp_backward(sub(params, "P1"), c1, dgamma)
    g2, dx2 = mlp_backward(sub(params, "P2"), c2, dbeta)

    # eta branch
    deta = np.sum(dout, axis=0)
    dg = np.outer(deta, x) / C
    dx3 = (g.T @ deta) / C
    dd = dg * (1 - g * g)
    ds = dd.sum(axis=1) - dd.sum(axis=0)
    g3, dxu = mlp_backward(sub(params, "P3"), c3, ds)
    g4, dxv = mlp_backward(sub(params, "P4"), c4, -ds)

    for name, gp in zip(PROJECTIONS, (g1, g2, g3, g4)):
        grads.update(nest(name, gp))
    dx = dx1 + dx2 + dx3 + dxu + dxv
    grads["bridge.W"] = np.outer(dx, cache.fc)
    grads["bridge.b"] = dx
    return grads, params["bridge.W"].T @ dx
