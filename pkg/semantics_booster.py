"""Query encoder: token embedding + learned positions, one causal
self-attention block, layer norm, position-wise FFN and an element-wise
textual attention gate pooled to a single query vector Z_ta.

Shapes: N tokens, E embedding size, H hidden size (= visual feature dim),
V vocabulary size.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import VsumError
from neural_core import (
    LayerNormCache,
    causal_mask,
    layer_norm_backward,
    layer_norm_forward,
    linear,
    linear_backward,
    relu,
    sigmoid,
    softmax_rows,
    softmax_rows_backward,
)

BOOSTER_KEYS = (
    "W_e", "P",
    "W_q", "b_q", "W_k", "b_k", "W_v", "b_v",
    "ln_gain", "ln_bias",
    "W_1", "b_1", "W_2", "b_2",
    "W_t", "b_t",
    "null_query",
)
BOW_KEYS = ("W_bow", "b_bow", "null_query")


class QueryError(VsumError, ValueError):
    pass


def _normal(rng: np.random.Generator, shape, fan_in: int, std: Optional[float]) -> np.ndarray:
    return rng.normal(0.0, std if std is not None else 1.0 / np.sqrt(fan_in), size=shape)


def init_booster_params(
    rng: np.random.Generator,
    vocab_size: int,
    embed_dim: int,
    hidden: int,
    max_len: int = 64,
    ffn_multiplier: int = 4,
    init_std: Optional[float] = None,
) -> Dict[str, np.ndarray]:
    inner = ffn_multiplier * hidden
    return {
        "W_e": _normal(rng, (embed_dim, vocab_size), embed_dim, init_std),
        "P": _normal(rng, (max_len, embed_dim), embed_dim, init_std),
        "W_q": _normal(rng, (hidden, embed_dim), embed_dim, init_std),
        "b_q": np.zeros(hidden),
        "W_k": _normal(rng, (hidden, embed_dim), embed_dim, init_std),
        "b_k": np.zeros(hidden),
        "W_v": _normal(rng, (hidden, embed_dim), embed_dim, init_std),
        "b_v": np.zeros(hidden),
        "ln_gain": np.ones(hidden),
        "ln_bias": np.zeros(hidden),
        "W_1": _normal(rng, (inner, hidden), hidden, init_std),
        "b_1": np.zeros(inner),
        "W_2": _normal(rng, (hidden, inner), inner, init_std),
        "b_2": np.zeros(hidden),
        "W_t": _normal(rng, (hidden, hidden), hidden, init_std),
        "b_t": np.zeros(hidden),
        "null_query": _normal(rng, (hidden,), hidden, init_std),
    }


def init_bow_params(
    rng: np.random.Generator, vocab_size: int, hidden: int, init_std: Optional[float] = None
) -> Dict[str, np.ndarray]:
    return {
        "W_bow": _normal(rng, (hidden, vocab_size), vocab_size, init_std),
        "b_bow": np.zeros(hidden),
        "null_query": _normal(rng, (hidden,), hidden, init_std),
    }


def embed_tokens(tokens: Sequence[int], params: Mapping[str, np.ndarray]) -> np.ndarray:
    """Row n = W_e[:, token_n] + P[n]."""
    W_e, P = params["W_e"], params["P"]
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= W_e.shape[1]):
        raise QueryError(f"token id outside vocabulary of size {W_e.shape[1]}")
    if ids.size > P.shape[0]:
        raise QueryError(f"query of {ids.size} tokens exceeds the maximum length {P.shape[0]}")
    return W_e[:, ids].T + P[: ids.size]


@dataclass
class AttentionCache:
    X: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    A: np.ndarray
    scale: float


def masked_self_attention_forward(X: np.ndarray, params: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, AttentionCache]:
    if X.ndim != 2 or X.shape[0] < 1:
        raise QueryError("masked self-attention needs at least one token")
    Q = linear(params["W_q"], params["b_q"], X)
    K = linear(params["W_k"], params["b_k"], X)
    V = linear(params["W_v"], params["b_v"], X)
    scale = 1.0 / np.sqrt(Q.shape[1])  # d_k = H
    A = softmax_rows(Q @ K.T * scale + causal_mask(X.shape[0]))
    return A @ V, AttentionCache(X=X, Q=Q, K=K, V=V, A=A, scale=scale)


def masked_self_attention(X: np.ndarray, params: Mapping[str, np.ndarray]) -> np.ndarray:
    return masked_self_attention_forward(X, params)[0]


def masked_self_attention_backward(
    cache: AttentionCache, params: Mapping[str, np.ndarray], dout: np.ndarray
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Returns (dX, grads for W_q/b_q/W_k/b_k/W_v/b_v)."""
    dA = dout @ cache.V.T
    dV = cache.A.T @ dout
    dS = softmax_rows_backward(cache.A, dA) * cache.scale
    dQ = dS @ cache.K
    dK = dS.T @ cache.Q
    grads: Dict[str, np.ndarray] = {}
    dX = np.zeros_like(cache.X)
    for name, d in (("q", dQ), ("k", dK), ("v", dV)):
        dW, db, dXi = linear_backward(params[f"W_{name}"], cache.X, d)
        grads[f"W_{name}"] = dW
        grads[f"b_{name}"] = db
        dX += dXi
    return dX, grads


@dataclass
class BoosterCache:
    tokens: np.ndarray
    attention: Optional[AttentionCache] = None
    norm: Optional[LayerNormCache] = None
    Z_norm: Optional[np.ndarray] = None
    U: Optional[np.ndarray] = None
    R1: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    gate: Optional[np.ndarray] = None


def booster_forward(tokens: Sequence[int], params: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, np.ndarray, BoosterCache]:
    """Returns (R_context [N x H], Z_ta [H], cache). An empty query yields the
    learned null-query vector and an empty R_context."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.size == 0:
        h = params["null_query"].shape[0]
        return np.zeros((0, h)), params["null_query"].copy(), BoosterCache(tokens=ids)
    X = embed_tokens(ids, params)
    O, att = masked_self_attention_forward(X, params)
    Z_norm, norm = layer_norm_forward(O, params["ln_gain"], params["ln_bias"])
    U = linear(params["W_1"], params["b_1"], Z_norm)
    R1 = relu(U)
    R = linear(params["W_2"], params["b_2"], R1)
    gate = sigmoid(linear(params["W_t"], params["b_t"], R))
    Z_ta = (gate * R).mean(axis=0)
    cache = BoosterCache(tokens=ids, attention=att, norm=norm, Z_norm=Z_norm, U=U, R1=R1, R=R, gate=gate)
    return R, Z_ta, cache


def booster_encode(tokens: Sequence[int], params: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    R, Z_ta, _ = booster_forward(tokens, params)
    return R, Z_ta


def booster_backward(cache: BoosterCache, params: Mapping[str, np.ndarray], dz: np.ndarray) -> Dict[str, np.ndarray]:
    grads = {k: np.zeros_like(params[k]) for k in BOOSTER_KEYS}
    n = cache.tokens.size
    if n == 0:
        grads["null_query"] = dz.copy()
        return grads

    dY = np.broadcast_to(dz / n, cache.R.shape)
    g = cache.gate
    dR = dY * g
    dT = dY * cache.R * g * (1.0 - g)
    grads["W_t"], grads["b_t"], dR_gate = linear_backward(params["W_t"], cache.R, dT)
    dR = dR + dR_gate

    grads["W_2"], grads["b_2"], dR1 = linear_backward(params["W_2"], cache.R1, dR)
    dU = dR1 * (cache.U > 0)
    grads["W_1"], grads["b_1"], dZ = linear_backward(params["W_1"], cache.Z_norm, dU)

    dO, grads["ln_gain"], grads["ln_bias"] = layer_norm_backward(cache.norm, dZ)
    dX, att_grads = masked_self_attention_backward(cache.attention, params, dO)
    grads.update(att_grads)

    grads["P"][:n] = dX
    # tokens may repeat, so accumulate columns
    np.add.at(grads["W_e"].T, cache.tokens, dX)
    return grads


# --- bag-of-words fallback ---

def bow_counts(tokens: Sequence[int], vocab_size: int) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise QueryError(f"token id outside vocabulary of size {vocab_size}")
    return np.bincount(ids, minlength=vocab_size).astype(np.float64)


def bow_encode(tokens: Sequence[int], params: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (counts, Z_ta). Empty queries use the null-query vector."""
    counts = bow_counts(tokens, params["W_bow"].shape[1])
    if not counts.any():
        return counts, params["null_query"].copy()
    return counts, params["W_bow"] @ counts + params["b_bow"]


def bow_backward(counts: np.ndarray, params: Mapping[str, np.ndarray], dz: np.ndarray) -> Dict[str, np.ndarray]:
    grads = {k: np.zeros_like(params[k]) for k in BOW_KEYS}
    if not counts.any():
        grads["null_query"] = dz.copy()
    else:
        grads["W_bow"] = np.outer(dz, counts)
        grads["b_bow"] = dz.copy()
    return grads
