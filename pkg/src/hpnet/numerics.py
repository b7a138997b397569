"""Dense-array math substrate: activations, losses, two-layer MLPs with
manual backward passes, and a central finite-difference gradient checker.

Arrays are plain ``numpy.ndarray`` objects. Storage and training use
``float32``; every function preserves the dtype it is given, so the same
code runs in ``float64`` for gradient verification.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Mapping, Optional

import numpy as np

DTYPE = np.float32

Params = Dict[str, np.ndarray]


class NumericalError(ArithmeticError):
    """Raised when a NaN/Inf shows up or a numerical precondition fails."""


class ShapeError(ValueError):
    """Raised on incompatible array shapes."""


def check_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of ``a[m, k]`` and ``b[k, n]`` with shape checks."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul output")


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax."""
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def _check_onehot(onehot: np.ndarray, n: int) -> int:
    if onehot.shape != (n,):
        raise ShapeError(f"one-hot shape {onehot.shape} does not match logits ({n},)")
    if np.count_nonzero(onehot) != 1 or np.max(onehot) != 1:
        raise ValueError("one-hot target must contain exactly one 1 and zeros elsewhere")
    return int(np.argmax(onehot))


def one_hot(label: int, n: int, dtype=DTYPE) -> np.ndarray:
    if not 0 <= label < n:
        raise ValueError(f"label {label} outside [0, {n})")
    y = np.zeros(n, dtype=dtype)
    y[label] = 1
    return y


def cross_entropy(scores: np.ndarray, onehot: np.ndarray) -> float:
    """Cross-entropy of pre-softmax ``scores`` against a one-hot target."""
    n = scores.shape[0] if scores.ndim == 1 else 0
    if n == 0:
        raise ValueError("cross_entropy needs a non-empty 1-d score vector")
    k = _check_onehot(onehot, n)
    loss = -log_softmax(scores)[k]
    check_finite(np.asarray(loss), "cross-entropy")
    return float(loss)


def cross_entropy_grad(scores: np.ndarray, onehot: np.ndarray) -> np.ndarray:
    """Gradient of :func:`cross_entropy` with respect to ``scores``."""
    _check_onehot(onehot, scores.shape[0])
    return (softmax(scores) - onehot).astype(scores.dtype, copy=False)


# --------------------------------------------------------------------------
# Two-layer MLP: y = W2 relu(W1 x + b1) + b2


def init_mlp(rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int,
             std: float = 0.02, dtype=DTYPE) -> Params:
    return {
        "W1": (rng.standard_normal((d_hidden, d_in)) * std).astype(dtype),
        "b1": np.zeros(d_hidden, dtype=dtype),
        "W2": (rng.standard_normal((d_out, d_hidden)) * std).astype(dtype),
        "b2": np.zeros(d_out, dtype=dtype),
    }


def _check_mlp(p: Mapping[str, np.ndarray], d_in: int) -> None:
    if p["W1"].shape[1] != d_in:
        raise ShapeError(f"MLP expects input of size {p['W1'].shape[1]}, got {d_in}")
    if p["W2"].shape[1] != p["W1"].shape[0]:
        raise ShapeError("MLP layer dimensions do not chain")
    if p["b1"].shape != (p["W1"].shape[0],) or p["b2"].shape != (p["W2"].shape[0],):
        raise ShapeError("MLP bias shapes do not match weights")


def mlp_forward(p: Mapping[str, np.ndarray], x: np.ndarray):
    """Return ``(y, cache)`` for the two-layer ReLU MLP."""
    if x.ndim != 1:
        raise ShapeError(f"MLP input must be a vector, got shape {x.shape}")
    _check_mlp(p, x.shape[0])
    pre = p["W1"] @ x + p["b1"]
    hidden = relu(pre)
    y = p["W2"] @ hidden + p["b2"]
    return y, (x, pre, hidden)


def mlp_backward(p: Mapping[str, np.ndarray], cache, dy: np.ndarray):
    """Return ``(param_grads, dx)`` given the upstream gradient ``dy``."""
    x, pre, hidden = cache
    dhidden = p["W2"].T @ dy
    dpre = dhidden * (pre > 0)
    grads = {
        "W1": np.outer(dpre, x),
        "b1": dpre,
        "W2": np.outer(dy, hidden),
        "b2": dy.copy(),
    }
    return grads, p["W1"].T @ dpre


# --------------------------------------------------------------------------
# Parameter dictionaries


def params_astype(params: Mapping[str, np.ndarray], dtype) -> Params:
    return {k: np.asarray(v, dtype=dtype).copy() for k, v in params.items()}


def zeros_like_params(params: Mapping[str, np.ndarray]) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def nest(prefix: str, params: Mapping[str, np.ndarray]) -> Params:
    return {f"{prefix}.{k}": v for k, v in params.items()}


def sub(params: Mapping[str, np.ndarray], prefix: str) -> Params:
    """Select entries under ``prefix.`` and strip the prefix."""
    head = prefix + "."
    return {k[len(head):]: v for k, v in params.items() if k.startswith(head)}


def finite_diff_grad(f: Callable[[Params], float], params: Mapping[str, np.ndarray],
                     eps: float = 1e-3,
                     keys: Optional[Iterable[str]] = None) -> Params:
    """Central-difference estimate of ``df/dparams`` for every scalar entry.

    ``f`` is called with a dictionary whose arrays are perturbed in place and
    restored afterwards, so it must not keep references between calls.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    work = {k: np.array(v, copy=True) for k, v in params.items()}
    selected = list(work) if keys is None else list(keys)
    grads: Params = {}
    for key in selected:
        arr = work[key]
        flat = arr.reshape(-1)
        g = np.zeros(flat.shape, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f(work)
            flat[i] = orig - eps
            f_minus = f(work)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericalError(f"non-finite objective while perturbing {key}[{i}]")
            g[i] = (f_plus - f_minus) / (2 * eps)
        grads[key] = g.reshape(arr.shape)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def max_relative_error(analytic: Mapping[str, np.ndarray], numeric: Mapping[str, np.ndarray]):
    """Largest relative error over all shared keys, and the key it occurs in."""
    worst, where = 0.0, None
    for key, num in numeric.items():
        err = float(np.max(relative_error(analytic[key], num), initial=0.0))
        if where is None or err > worst:
            worst, where = err, key
    return worst, where
