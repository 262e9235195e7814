"""The full query-conditioned frame scorer and its hand-written backward pass.

booster (or bag-of-words) -> Z_ta
frame features    -> visual gate -> Z_as
segment features  -> visual gate -> Z_ast -> broadcast to frames
Z_ta * Z_as * Z_ast -> mutual attention -> classifier head -> frame logits
frame log-probabilities -> mean per segment (pretext task only)
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from attention_fusion import (
    HEAD_KEYS,
    broadcast_segments,
    classify_frames,
    classify_frames_backward,
    init_fusion_params,
    mutual_attention_backward,
    mutual_attention_forward,
    pool_by_index_backward,
    pool_segment_logits,
    scatter_segments,
    visual_attention_backward,
    visual_attention_forward,
)
from errors import TrainingError
from neural_core import (
    GradCheckReport,
    cross_entropy,
    grad_check,
    log_softmax_rows,
    log_softmax_rows_backward,
    nll,
    softmax_rows,
)
from pseudo_label import Boundary, segment_index
from semantics_booster import (
    bow_backward,
    bow_encode,
    booster_backward,
    booster_forward,
    init_booster_params,
    init_bow_params,
)

logger = logging.getLogger(__name__)

GRANULARITIES = ("frame", "segment")


@dataclass(frozen=True)
class ModelSpec:
    vocab_size: int
    feature_dim: int
    num_classes: int
    embed_dim: int = 64
    max_query_len: int = 64
    ffn_multiplier: int = 4
    use_semantics_booster: bool = True
    use_mutual_attention: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class VideoBatch:
    """One video ready for the model; frame arrays are already repeated to
    the dataset length M."""
    video_id: str
    tokens: np.ndarray
    frame_features: np.ndarray  # [M, d]
    segment_features: np.ndarray  # [S, d]
    boundaries: Sequence[Boundary]  # [S] half-open segments on original frames
    index_map: np.ndarray  # [M] source frame of each repeated frame
    frame_count: int
    frame_labels: Optional[np.ndarray] = None  # [M], 1-based
    segment_labels: Optional[np.ndarray] = None  # [S], 1-based

    @property
    def num_segments(self) -> int:
        return self.segment_features.shape[0]

    @property
    def seg_idx(self) -> np.ndarray:
        """[M] segment of each repeated frame."""
        return segment_index(self.boundaries, self.frame_count)[self.index_map]


@dataclass
class ForwardCache:
    logits: np.ndarray
    Z_ma: np.ndarray
    query_cache: Any
    mutual: Any
    frame_gate: np.ndarray
    segment_gate: np.ndarray
    Z_ast: np.ndarray


class QuerySummarizer:
    def __init__(self, spec: ModelSpec, params: Dict[str, np.ndarray]):
        self.spec = spec
        self.params = params

    @classmethod
    def initialize(cls, spec: ModelSpec, seed: int, init_std: Optional[float] = None) -> "QuerySummarizer":
        rng = np.random.default_rng(seed)
        params = init_fusion_params(rng, spec.feature_dim, spec.num_classes, spec.use_mutual_attention, init_std)
        if spec.use_semantics_booster:
            params.update(init_booster_params(
                rng, spec.vocab_size, spec.embed_dim, spec.feature_dim,
                spec.max_query_len, spec.ffn_multiplier, init_std,
            ))
        else:
            params.update(init_bow_params(rng, spec.vocab_size, spec.feature_dim, init_std))
        return cls(spec, params)

    def copy(self) -> "QuerySummarizer":
        return QuerySummarizer(self.spec, {k: v.copy() for k, v in self.params.items()})

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def head_keys(self) -> Tuple[str, ...]:
        return HEAD_KEYS

    # --- forward ---

    def encode_query(self, tokens) -> Tuple[np.ndarray, Any]:
        if self.spec.use_semantics_booster:
            _, z, cache = booster_forward(tokens, self.params)
            return z, cache
        counts, z = bow_encode(tokens, self.params)
        return z, counts

    def forward(self, batch: VideoBatch) -> ForwardCache:
        p = self.params
        Z_ta, qcache = self.encode_query(batch.tokens)
        Z_as, frame_gate = visual_attention_forward(batch.frame_features, p["W_s"], p["b_s"])
        Z_ast, segment_gate = visual_attention_forward(batch.segment_features, p["W_st"], p["b_st"])
        Z_ast_frames = broadcast_segments(Z_ast, batch.boundaries, batch.frame_count)[batch.index_map]
        Z_ma, mcache = mutual_attention_forward(
            Z_ta, Z_as, Z_ast_frames, p, use_gate=self.spec.use_mutual_attention
        )
        logits = classify_frames(Z_ma, p)
        return ForwardCache(
            logits=logits, Z_ma=Z_ma, query_cache=qcache, mutual=mcache,
            frame_gate=frame_gate, segment_gate=segment_gate, Z_ast=Z_ast,
        )

    def predict_proba(self, batch: VideoBatch) -> np.ndarray:
        return softmax_rows(self.forward(batch).logits)

    # --- loss and backward ---

    def _targets(self, batch: VideoBatch, granularity: str) -> np.ndarray:
        if granularity not in GRANULARITIES:
            raise TrainingError(f"granularity must be one of {GRANULARITIES}, got {granularity!r}")
        labels = batch.frame_labels if granularity == "frame" else batch.segment_labels
        if labels is None:
            kind = "frame labels" if granularity == "frame" else "pseudo segment labels"
            raise TrainingError(f"video {batch.video_id} has no {kind}")
        return labels

    def _segment_loss(self, batch: VideoBatch, logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
        """Pretext loss: mean member-frame log-probability of the segment's
        pseudo label. Returns (loss, dlogits)."""
        log_p = log_softmax_rows(logits)
        seg_log_p = pool_segment_logits(log_p, batch.boundaries, batch.index_map)
        loss, dseg = nll(seg_log_p, labels)
        dlog_p = pool_by_index_backward(dseg, batch.seg_idx, batch.num_segments)
        return loss, log_softmax_rows_backward(log_p, dlog_p)

    def loss(self, batch: VideoBatch, granularity: str = "frame") -> float:
        labels = self._targets(batch, granularity)
        logits = self.forward(batch).logits
        if granularity == "segment":
            return self._segment_loss(batch, logits, labels)[0]
        return cross_entropy(logits, labels)[0]

    def loss_and_grads(self, batch: VideoBatch, granularity: str = "frame") -> Tuple[float, Dict[str, np.ndarray]]:
        labels = self._targets(batch, granularity)
        cache = self.forward(batch)
        if granularity == "segment":
            loss, dlogits = self._segment_loss(batch, cache.logits, labels)
        else:
            loss, dlogits = cross_entropy(cache.logits, labels)
        return loss, self.backward(batch, cache, dlogits)

    def backward(self, batch: VideoBatch, cache: ForwardCache, dlogits: np.ndarray) -> Dict[str, np.ndarray]:
        p = self.params
        grads, dZ_ma = classify_frames_backward(cache.Z_ma, p, dlogits)

        mgrads, dZ_ta, dZ_as, dZ_ast_frames = mutual_attention_backward(cache.mutual, p, dZ_ma)
        grads.update(mgrads)

        grads["W_s"], grads["b_s"], _ = visual_attention_backward(
            batch.frame_features, p["W_s"], cache.frame_gate, dZ_as
        )
        dZ_ast = scatter_segments(dZ_ast_frames, batch.seg_idx, batch.num_segments)
        grads["W_st"], grads["b_st"], _ = visual_attention_backward(
            batch.segment_features, p["W_st"], cache.segment_gate, dZ_ast
        )

        if self.spec.use_semantics_booster:
            grads.update(booster_backward(cache.query_cache, p, dZ_ta))
        else:
            grads.update(bow_backward(cache.query_cache, p, dZ_ta))
        return grads

    # --- verification ---

    def check_gradients(
        self,
        batch: VideoBatch,
        granularity: str = "frame",
        max_entries_per_block: Optional[int] = None,
        seed: int = 0,
        step: float = 1e-5,
    ) -> GradCheckReport:
        """Central-difference check of every parameter block through the full model."""
        _, grads = self.loss_and_grads(batch, granularity)
        report = grad_check(
            lambda: self.loss(batch, granularity), self.params, grads,
            step=step, max_entries=max_entries_per_block, seed=seed,
        )
        logger.debug("grad check (%s): max rel err %.3e over %d entries",
                     granularity, report.max_rel_error, report.checked_entries)
        return report

    # --- persistence ---

    def checkpoint_header(self, seed: int, config_hash: str) -> Dict[str, Any]:
        return {"seed": seed, "config_hash": config_hash, "model": self.spec.to_dict()}

    @classmethod
    def from_checkpoint(cls, params: Mapping[str, np.ndarray], header: Mapping[str, Any]) -> "QuerySummarizer":
        spec = ModelSpec(**header["model"])
        return cls(spec, {k: np.array(v, dtype=np.float64) for k, v in params.items()})
