"""Visual attention gates, segment-to-frame alignment, mutual attention and
the frame classifier head.

Frame features F_s give Z_as, segment features F_st give Z_ast; both go
through an element-wise sigmoid gate. Mutual attention multiplies the query
vector Z_ta with both visual streams and applies a per-frame 1x1 gated map.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import VsumError
from neural_core import linear, linear_backward, sigmoid
from pseudo_label import Boundary, segment_index

VISUAL_KEYS = ("W_s", "b_s", "W_st", "b_st")
MUTUAL_KEYS = ("W_m", "b_m")
HEAD_KEYS = ("W_c", "b_c")


class FusionError(VsumError, ValueError):
    pass


def init_fusion_params(
    rng: np.random.Generator,
    feature_dim: int,
    num_classes: int,
    use_mutual_attention: bool = True,
    init_std: Optional[float] = None,
) -> Dict[str, np.ndarray]:
    std = init_std if init_std is not None else 1.0 / np.sqrt(feature_dim)
    params = {
        "W_s": rng.normal(0.0, std, size=(feature_dim, feature_dim)),
        "b_s": np.zeros(feature_dim),
        "W_st": rng.normal(0.0, std, size=(feature_dim, feature_dim)),
        "b_st": np.zeros(feature_dim),
        "W_c": rng.normal(0.0, std, size=(num_classes, feature_dim)),
        "b_c": np.zeros(num_classes),
    }
    if use_mutual_attention:
        params["W_m"] = rng.normal(0.0, std, size=(feature_dim, feature_dim))
        params["b_m"] = np.zeros(feature_dim)
    return params


# --- visual attention ---

def visual_attention_forward(F: np.ndarray, W: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """out = sigmoid(F W^T + b) * F, row-wise. Returns (out, gate)."""
    if F.ndim != 2 or F.shape[1] != W.shape[1] or W.shape[0] != W.shape[1]:
        raise FusionError(f"visual attention: features {F.shape} do not fit gate {W.shape}")
    gate = sigmoid(linear(W, b, F))
    return gate * F, gate


def visual_attention(F: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    return visual_attention_forward(F, W, b)[0]


def visual_attention_backward(
    F: np.ndarray, W: np.ndarray, gate: np.ndarray, dout: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dW, db, dF)."""
    dA = dout * F * gate * (1.0 - gate)
    dW, db, dF_gate = linear_backward(W, F, dA)
    return dW, db, dout * gate + dF_gate


# --- segment alignment ---

def broadcast_segments(Z_ast: np.ndarray, boundaries: Sequence[Boundary], num_frames: int) -> np.ndarray:
    """Give every frame its enclosing segment's row."""
    idx = segment_index(boundaries, num_frames)
    if idx.max() >= Z_ast.shape[0]:
        raise FusionError(f"{len(boundaries)} segments but only {Z_ast.shape[0]} segment feature rows")
    return Z_ast[idx]


def scatter_segments(dframes: np.ndarray, seg_idx: np.ndarray, num_segments: int) -> np.ndarray:
    """Adjoint of row gathering: sums frame gradients into their segments."""
    out = np.zeros((num_segments, dframes.shape[1]))
    np.add.at(out, seg_idx, dframes)
    return out


# --- mutual attention ---

def hadamard3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Element-wise a * b * c, multiplied in sorted order per element so the
    result does not depend on argument order."""
    s = np.sort(np.stack(np.broadcast_arrays(a, b, c)), axis=0)
    return s[0] * s[1] * s[2]


@dataclass
class MutualCache:
    Z_ta: np.ndarray
    Z_as: np.ndarray
    Z_ast_frames: np.ndarray
    H: np.ndarray
    gate: Optional[np.ndarray]


def mutual_attention_forward(
    Z_ta: np.ndarray,
    Z_as: np.ndarray,
    Z_ast_frames: np.ndarray,
    params: Mapping[str, np.ndarray],
    use_gate: bool = True,
) -> Tuple[np.ndarray, MutualCache]:
    d = Z_as.shape[1]
    if Z_ta.shape != (d,) or Z_ast_frames.shape != Z_as.shape:
        raise FusionError(f"mutual attention: widths differ (Z_ta {Z_ta.shape}, Z_as {Z_as.shape}, "
                          f"Z_ast {Z_ast_frames.shape})")
    H = hadamard3(Z_ta, Z_as, Z_ast_frames)
    if not use_gate:
        return H, MutualCache(Z_ta, Z_as, Z_ast_frames, H, None)
    gate = sigmoid(linear(params["W_m"], params["b_m"], H))
    return gate * H, MutualCache(Z_ta, Z_as, Z_ast_frames, H, gate)


def mutual_attention(
    Z_ta: np.ndarray, Z_as: np.ndarray, Z_ast_frames: np.ndarray, params: Mapping[str, np.ndarray], use_gate: bool = True
) -> np.ndarray:
    return mutual_attention_forward(Z_ta, Z_as, Z_ast_frames, params, use_gate)[0]


def mutual_attention_backward(
    cache: MutualCache, params: Mapping[str, np.ndarray], dout: np.ndarray
) -> Tuple[Dict[str, np.ndarray], np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grads for W_m/b_m, dZ_ta, dZ_as, dZ_ast_frames)."""
    grads: Dict[str, np.ndarray] = {}
    if cache.gate is None:
        dH = dout
    else:
        g = cache.gate
        dA = dout * cache.H * g * (1.0 - g)
        grads["W_m"], grads["b_m"], dH_gate = linear_backward(params["W_m"], cache.H, dA)
        dH = dout * g + dH_gate
    dZ_ta = np.sum(dH * cache.Z_as * cache.Z_ast_frames, axis=0)
    dZ_as = dH * cache.Z_ta * cache.Z_ast_frames
    dZ_ast = dH * cache.Z_ta * cache.Z_as
    return grads, dZ_ta, dZ_as, dZ_ast


# --- head and pooling ---

def classify_frames(Z_ma: np.ndarray, params: Mapping[str, np.ndarray]) -> np.ndarray:
    W_c, b_c = params["W_c"], params["b_c"]
    if Z_ma.ndim != 2 or Z_ma.shape[1] != W_c.shape[1]:
        raise FusionError(f"classifier head expects width {W_c.shape[1]}, got {Z_ma.shape}")
    return linear(W_c, b_c, Z_ma)


def classify_frames_backward(
    Z_ma: np.ndarray, params: Mapping[str, np.ndarray], dlogits: np.ndarray
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    dW, db, dZ = linear_backward(params["W_c"], Z_ma, dlogits)
    return {"W_c": dW, "b_c": db}, dZ


def pool_by_index(logits: np.ndarray, seg_idx: np.ndarray, num_segments: int) -> np.ndarray:
    counts = np.bincount(seg_idx, minlength=num_segments).astype(np.float64)
    if np.any(counts == 0):
        raise FusionError("a segment has no member frames")
    sums = np.zeros((num_segments, logits.shape[1]))
    np.add.at(sums, seg_idx, logits)
    return sums / counts[:, None]


def pool_by_index_backward(dseg: np.ndarray, seg_idx: np.ndarray, num_segments: int) -> np.ndarray:
    counts = np.bincount(seg_idx, minlength=num_segments).astype(np.float64)
    return (dseg / counts[:, None])[seg_idx]


def pool_segment_logits(
    logits: np.ndarray, boundaries: Sequence[Boundary], index_map: Optional[np.ndarray] = None
) -> np.ndarray:
    """Mean of member-frame rows per segment.

    Rows are whatever per-frame quantity is being pooled; the pretext loss
    pools log-probabilities.

    ``boundaries`` are on original frames; when the logits come from a
    frame-repeated sequence, ``index_map`` lifts them onto repeated positions.
    """
    if index_map is None:
        seg_idx = segment_index(boundaries, logits.shape[0])
    else:
        if index_map.shape[0] != logits.shape[0]:
            raise FusionError("index_map length differs from the number of logit rows")
        seg_idx = segment_index(boundaries, int(index_map.max()) + 1)[index_map]
    return pool_by_index(logits, seg_idx, len(boundaries))
