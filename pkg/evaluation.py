"""Summary selection and F-beta scoring.

Frame class distributions become an expected score per frame; repeated
frames are collapsed back to original indexing by averaging; the top
ceil(budget * n) frames form the summary. Ground-truth summaries come from
each annotator's raw scores by the same rule.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Union

import numpy as np

from checkpoint import file_sha256, load_checkpoint
from config import EvalConfig, TrainConfig, config_hash
from dataset_io import Dataset
from errors import EvaluationError
from query_model import QuerySummarizer, VideoBatch
from training_pipeline import prepare_batches

logger = logging.getLogger(__name__)


class FrameScorer(Protocol):
    def predict_proba(self, batch: "VideoBatch") -> np.ndarray:
        ...


@dataclass(frozen=True)
class SummarySelection:
    mask: np.ndarray  # bool, original frame indexing
    budget: float
    scores: np.ndarray  # expected score per original frame

    @property
    def selected(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


@dataclass
class EvalReport:
    per_video: Dict[str, float]
    mean_f_beta: float
    beta: float
    budget: float
    gt_mode: str
    config_hash: Optional[str] = None
    checkpoint_hash: Optional[str] = None
    split: List[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, path: Union[str, Path]) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.to_json(), encoding="utf-8")
        return p


def expected_score(probs: np.ndarray, atol: float = 1e-6) -> np.ndarray:
    """Expected 1-based class index of each row."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise EvaluationError(f"class distribution must be 2-D, got shape {p.shape}")
    if np.any(p < -atol) or not np.allclose(p.sum(axis=1), 1.0, atol=atol):
        raise EvaluationError("class distribution rows must be non-negative and sum to 1")
    return p @ np.arange(1, p.shape[1] + 1, dtype=np.float64)


def collapse_repeated(scores: np.ndarray, index_map: np.ndarray, frame_count: int) -> np.ndarray:
    """Mean of repeated-frame scores over each original frame's preimage."""
    counts = np.bincount(index_map, minlength=frame_count)
    if counts.shape[0] != frame_count or np.any(counts == 0):
        raise EvaluationError("index_map must cover every original frame")
    return np.bincount(index_map, weights=scores, minlength=frame_count) / counts


def budget_size(budget: float, n: int) -> int:
    if not (0 < budget <= 1):
        raise EvaluationError(f"budget must lie in (0, 1], got {budget}")
    # round first so 0.15 * 20 counts as 3, not 3.0000000000000004
    return min(n, math.ceil(round(budget * n, 9)))


def top_budget_mask(scores: np.ndarray, budget: float) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    k = budget_size(budget, s.shape[0])
    order = np.argsort(-s, kind="stable")  # ties keep the earlier frame
    mask = np.zeros(s.shape[0], dtype=bool)
    mask[order[:k]] = True
    return mask


def select_summary(
    scores: np.ndarray,
    budget: float = 0.15,
    index_map: Optional[np.ndarray] = None,
    frame_count: Optional[int] = None,
) -> SummarySelection:
    """Top-budget frames by expected score, on original frame indexing.

    Pass ``index_map`` (and ``frame_count``) when ``scores`` are over repeated
    frames; they are averaged back first.
    """
    s = np.asarray(scores, dtype=np.float64)
    if index_map is not None:
        n = frame_count if frame_count is not None else int(index_map.max()) + 1
        s = collapse_repeated(s, index_map, n)
    if s.ndim != 1 or s.size == 0:
        raise EvaluationError("scores must be a non-empty vector")
    return SummarySelection(mask=top_budget_mask(s, budget), budget=budget, scores=s)


def _f_single(pred: np.ndarray, gt: np.ndarray, beta: float) -> float:
    overlap = float(np.count_nonzero(pred & gt))
    npred, ngt = np.count_nonzero(pred), np.count_nonzero(gt)
    p = overlap / npred if npred else 0.0
    r = overlap / ngt if ngt else 0.0
    if p == 0.0 and r == 0.0:
        return 0.0
    b2 = beta * beta
    return (1.0 + b2) * p * r / (b2 * p + r)


def f_beta(pred: Union[SummarySelection, np.ndarray], gt_selections: Sequence[np.ndarray], beta: float = 1.0) -> float:
    """Mean F-beta of ``pred`` against each ground-truth mask."""
    mask = pred.mask if isinstance(pred, SummarySelection) else np.asarray(pred, dtype=bool)
    gts = [np.asarray(g, dtype=bool) for g in gt_selections]
    if not gts:
        raise EvaluationError("at least one ground-truth selection is required")
    if any(g.shape != mask.shape for g in gts):
        raise EvaluationError(f"mask lengths differ: prediction {mask.shape[0]}, "
                              f"ground truth {sorted({g.shape[0] for g in gts})}")
    if not beta > 0:
        raise EvaluationError(f"beta must be > 0, got {beta}")
    return float(np.mean([_f_single(mask, g, beta) for g in gts]))


def ground_truth_masks(annotator_scores: np.ndarray, budget: float, gt_mode: str = "per_annotator") -> List[np.ndarray]:
    scores = np.asarray(annotator_scores, dtype=np.float64)
    if gt_mode == "consensus":
        return [top_budget_mask(scores.mean(axis=0), budget)]
    if gt_mode != "per_annotator":
        raise EvaluationError(f"unknown gt_mode {gt_mode!r}")
    return [top_budget_mask(row, budget) for row in scores]


def summarize_batch(model: FrameScorer, batch: VideoBatch, budget: float) -> SummarySelection:
    probs = model.predict_proba(batch)
    return select_summary(expected_score(probs), budget, batch.index_map, batch.frame_count)


def evaluate(
    model: FrameScorer,
    dataset: Dataset,
    video_ids: Sequence[str],
    eval_config: Optional[EvalConfig] = None,
    train_config: Optional[TrainConfig] = None,
    checkpoint_hash: Optional[str] = None,
    batches: Optional[Sequence[VideoBatch]] = None,
) -> EvalReport:
    """Per-video forward, expected score, budgeted selection and F-beta
    against the annotators' own budgeted selections."""
    ec = eval_config or EvalConfig()
    tc = train_config or TrainConfig()
    if not video_ids:
        raise EvaluationError("evaluation split is empty")
    if batches is None:
        batches = prepare_batches(dataset, video_ids, tc)
    if len(batches) != len(video_ids):
        raise EvaluationError("one prepared batch per video is required")

    per_video: Dict[str, float] = {}
    for vid, batch in zip(video_ids, batches):
        selection = summarize_batch(model, batch, ec.budget)
        gts = ground_truth_masks(dataset[vid].annotations.scores, ec.budget, ec.gt_mode)
        per_video[vid] = f_beta(selection, gts, ec.beta)
        logger.debug("%s: F_%g = %.4f (%d of %d frames)", vid, ec.beta, per_video[vid],
                     int(selection.mask.sum()), selection.mask.size)
    mean = float(np.mean(list(per_video.values())))
    logger.info("evaluated %d videos: mean F_%g = %.4f", len(per_video), ec.beta, mean)
    return EvalReport(
        per_video=per_video, mean_f_beta=mean, beta=ec.beta, budget=ec.budget, gt_mode=ec.gt_mode,
        config_hash=config_hash(tc, ec), checkpoint_hash=checkpoint_hash, split=list(video_ids),
    )


def evaluate_checkpoint(
    checkpoint_path: Union[str, Path],
    dataset: Dataset,
    video_ids: Sequence[str],
    eval_config: Optional[EvalConfig] = None,
    train_config: Optional[TrainConfig] = None,
) -> EvalReport:
    params, header = load_checkpoint(checkpoint_path)
    model = QuerySummarizer.from_checkpoint(params, header)
    return evaluate(model, dataset, video_ids, eval_config, train_config, file_sha256(checkpoint_path))


def write_plot_csv(path: Union[str, Path], selection: SummarySelection) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["frame", "expected_score", "selected"])
        for i, (s, sel) in enumerate(zip(selection.scores, selection.mask)):
            w.writerow([i, f"{s:.10g}", int(sel)])
    return p
