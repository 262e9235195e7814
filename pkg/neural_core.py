"""Dense numpy kernels with explicit gradients.

Every differentiable op comes as a forward function plus a ``*_backward``
that maps the upstream gradient to gradients of its inputs and parameters.
Training math is float64 throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, MutableMapping, Optional, Tuple

import numpy as np

from errors import VsumError

MASK_VALUE = -1e9
LAYER_NORM_EPS = 1e-5


class ShapeError(VsumError, ValueError):
    pass


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# --- linear ---

def linear(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    if X.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"linear: X {X.shape}, W {W.shape}, b {b.shape} do not agree")
    return X @ W.T + b


def linear_backward(W: np.ndarray, X: np.ndarray, dout: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dW, db, dX)."""
    return dout.T @ X, dout.sum(axis=0), dout @ W


# --- element-wise ---

def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# --- softmax ---

def softmax_rows(X: np.ndarray) -> np.ndarray:
    shifted = X - X.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(P: np.ndarray, dP: np.ndarray) -> np.ndarray:
    return P * (dP - np.sum(dP * P, axis=1, keepdims=True))


def causal_mask(n: int) -> np.ndarray:
    """Additive mask: 0 on and below the diagonal, MASK_VALUE above."""
    return np.triu(np.full((n, n), MASK_VALUE), k=1)


# --- layer norm ---

@dataclass
class LayerNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gain: np.ndarray


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    return layer_norm_forward(x, gain, bias, eps)[0]


def layer_norm_forward(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = LAYER_NORM_EPS
) -> Tuple[np.ndarray, LayerNormCache]:
    """Normalizes the last axis; works on a vector or row-wise on a matrix."""
    if x.shape[-1] < 2:
        raise ShapeError("layer_norm needs at least 2 features")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mu) * inv_std
    return gain * x_hat + bias, LayerNormCache(x_hat=x_hat, inv_std=inv_std, gain=gain)


def layer_norm_backward(cache: LayerNormCache, dout: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dgain, dbias)."""
    x_hat = cache.x_hat
    lead = tuple(range(dout.ndim - 1))
    dgain = np.sum(dout * x_hat, axis=lead)
    dbias = np.sum(dout, axis=lead)
    dxh = dout * cache.gain
    n = x_hat.shape[-1]
    dx = cache.inv_std / n * (
        n * dxh - dxh.sum(axis=-1, keepdims=True) - x_hat * np.sum(dxh * x_hat, axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


# --- loss ---

def class_ids(labels, n: int, c: int) -> np.ndarray:
    """1-based class ids as int64; rejects fractional ids instead of truncating."""
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ShapeError(f"{y.shape[0] if y.ndim else 0} labels for {n} rows")
    if y.dtype.kind not in "iu":
        if y.dtype.kind not in "fb" or not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
            raise ShapeError(f"labels must be whole class ids, got {y[:5].tolist()}")
    y = y.astype(np.int64)
    if np.any(y < 1) or np.any(y > c):
        raise ShapeError(f"labels must lie in [1, {c}]")
    return y


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax_rows_backward(log_p: np.ndarray, dlog_p: np.ndarray) -> np.ndarray:
    return dlog_p - np.exp(log_p) * dlog_p.sum(axis=1, keepdims=True)


def nll(log_p: np.ndarray, labels) -> Tuple[float, np.ndarray]:
    """Mean negative log-likelihood of rows that are already log-probabilities.

    Returns (loss, dlog_p).
    """
    n, c = log_p.shape
    y = class_ids(labels, n, c)
    rows = np.arange(n)
    grad = np.zeros_like(log_p)
    grad[rows, y - 1] = -1.0 / n
    return max(-float(log_p[rows, y - 1].mean()), 0.0), grad


def cross_entropy(logits: np.ndarray, labels) -> Tuple[float, np.ndarray]:
    """Mean categorical cross-entropy over rows; labels are 1-based class ids.

    Returns (loss, dlogits).
    """
    logits = as_f64(logits)
    n, c = logits.shape
    y = class_ids(labels, n, c)
    log_p = log_softmax_rows(logits)
    rows = np.arange(n)
    loss = -float(log_p[rows, y - 1].mean())
    grad = np.exp(log_p)
    grad[rows, y - 1] -= 1.0
    return max(loss, 0.0), grad / n


# --- optimizer ---

@dataclass
class AdamState:
    lr: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState, params: MutableMapping[str, np.ndarray], grads: Mapping[str, np.ndarray]
) -> Tuple[MutableMapping[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place. Parameters without a gradient
    entry are left alone (frozen)."""
    for k, g in grads.items():
        if k not in params:
            raise ShapeError(f"adam_step: gradient for unknown parameter {k!r}")
        if params[k].shape != g.shape:
            raise ShapeError(f"adam_step: {k} has shape {params[k].shape}, gradient {g.shape}")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k in sorted(grads):
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[k] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# --- finite differences ---

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: Dict[str, float]
    checked_entries: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from
    dominating through round-off."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(
    loss_fn: Callable[[], float],
    params: MutableMapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    step: float = 1e-5,
    floor: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic ``grads`` with central differences of ``loss_fn``.

    ``loss_fn`` must read ``params`` in place; each entry is perturbed and
    restored. With ``max_entries`` only a random sample of each block is
    checked.
    """
    rng = np.random.default_rng(seed)
    per_param: Dict[str, float] = {}
    checked = 0
    for name in sorted(grads):
        p = params[name]
        flat = p.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ShapeError(f"grad_check: parameter {name!r} must be contiguous")
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + step
            up = loss_fn()
            flat[i] = old - step
            down = loss_fn()
            flat[i] = old
            numeric[j] = (up - down) / (2.0 * step)
        analytic = np.asarray(grads[name]).reshape(-1)[idx]
        err = relative_error(analytic, numeric, floor)
        per_param[name] = float(err.max()) if err.size else 0.0
        checked += idx.size
    worst = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(max_rel_error=worst, per_param=per_param, checked_entries=checked)
