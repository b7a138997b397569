"""Per-dimension Fisher scores (between-class over within-class scatter)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Reported in place of +inf when a dimension has between-class scatter but
# no within-class scatter.
SENTINEL = float(np.finfo(np.float32).max)


@dataclass
class FisherResult:
    scores: np.ndarray        # [d], SENTINEL where unbounded
    mean: float               # mean over bounded, non-degenerate dimensions
    unbounded: np.ndarray     # [d] bool, within == 0 and between > 0
    degenerate: np.ndarray    # [d] bool, within == 0 and between == 0 (score 0)


def fisher_score(features: np.ndarray, labels: Sequence[int]) -> FisherResult:
    """``sum_c n_c (mu_c - mu)^2 / sum_c sum_{i in c} (x_i - mu_c)^2`` per column."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"features {x.shape} and labels {y.shape} do not align")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise ValueError("Fisher score needs at least two classes")
    if np.any(counts < 2):
        raise ValueError("every class needs at least two samples")
    mu = x.mean(axis=0)
    between = np.zeros(x.shape[1])
    within = np.zeros(x.shape[1])
    for c, n_c in zip(classes, counts):
        xc = x[y == c]
        mu_c = xc.mean(axis=0)
        between += n_c * (mu_c - mu) ** 2
        within += ((xc - mu_c) ** 2).sum(axis=0)
    # scatter below this relative level is rounding noise
    tol = 1e-12 * np.maximum(1.0, (x ** 2).sum(axis=0))
    zero_w = within <= tol
    zero_b = between <= tol
    scores = np.zeros(x.shape[1])
    ok = ~zero_w
    scores[ok] = between[ok] / within[ok]
    unbounded = zero_w & ~zero_b
    degenerate = zero_w & zero_b
    scores[unbounded] = SENTINEL
    finite = ok
    mean = float(scores[finite].mean()) if np.any(finite) else 0.0
    return FisherResult(scores, mean, unbounded, degenerate)
