"""Seeded synthetic dataset bundles for tests and desk-scale runs.

Each video has a smooth latent importance curve. Annotators score that curve
with noise; frame features are per-class prototypes plus noise, so the
classes the model is asked to predict are recoverable from the features.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import DATASET_PRESETS
from dataset_io import DEFAULT_FEATURE_DIM, SCORE_KINDS, write_feature_file
from errors import ConfigError
from evaluation import budget_size
from pseudo_label import SEGMENT_SECONDS, score_to_class, segment_boundaries

logger = logging.getLogger(__name__)


def _latent_curve(rng: np.random.Generator, n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)
    curve = np.zeros(n)
    for _ in range(3):
        freq = rng.uniform(0.5, 3.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        curve += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * freq * t + phase)
    lo, hi = curve.min(), curve.max()
    return (curve - lo) / (hi - lo) if hi > lo else np.full(n, 0.5)


def _with_highlight(latent: np.ndarray, budget: float) -> np.ndarray:
    """Lift the top budget share of frames onto a plateau at 1.0 and squeeze
    the rest to at most 0.7, so the best frames form their own top class."""
    top = np.argsort(-latent, kind="stable")[:budget_size(budget, latent.size)]
    out = 0.7 * latent
    out[top] = 1.0
    return out


def _annotator_scores(
    rng: np.random.Generator,
    latent: np.ndarray,
    annotators: int,
    num_classes: int,
    score_kind: str,
    spread: Optional[float] = None,
) -> np.ndarray:
    if score_kind == "integer_categories":
        sd = 0.35 if spread is None else spread
        raw = 1 + latent * (num_classes - 1) + rng.normal(0.0, sd, size=(annotators, latent.size))
        return np.clip(np.rint(raw), 1, num_classes)
    sd = 0.05 if spread is None else spread
    return np.clip(latent + rng.normal(0.0, sd, size=(annotators, latent.size)), 0.0, 1.0)


def write_synthetic_bundle(
    root: Union[str, Path],
    num_videos: int = 4,
    frame_range: Tuple[int, int] = (12, 32),
    fps: int = 2,
    num_classes: int = 5,
    score_kind: str = "integer_categories",
    feature_dim: int = 16,
    vocab_size: int = 20,
    annotators: int = 3,
    seed: int = 0,
    with_queries: bool = True,
    dataset_name: str = "synthetic",
    max_frames: Optional[int] = None,
    split_counts: Optional[Sequence[int]] = None,
    noise: float = 0.1,
    annotator_noise: Optional[float] = None,
    query_pool: Optional[int] = None,
    highlight_budget: Optional[float] = None,
) -> Path:
    """Write manifest.json, feature files, annotations and vocab.json under
    ``root``; returns the manifest path.

    ``noise`` is the feature noise around each class prototype and
    ``annotator_noise`` the spread of annotator scores around the latent curve
    (None keeps a per-score-kind default). With ``query_pool`` the videos
    cycle through that many shared queries instead of drawing one each.
    ``highlight_budget`` gives every video a clear-cut set of top frames,
    exactly the size a summary at that budget selects.
    """
    if score_kind not in SCORE_KINDS:
        raise ConfigError(f"score_kind must be one of {SCORE_KINDS}, got {score_kind!r}")
    lo, hi = frame_range
    if num_videos < 1 or lo < 1 or hi < lo:
        raise ConfigError(f"need num_videos >= 1 and 1 <= frame_range[0] <= frame_range[1], got "
                          f"{num_videos}, {frame_range}")
    if vocab_size < 2:
        raise ConfigError("vocab_size must be >= 2 (id 0 is reserved)")
    if query_pool is not None and query_pool < 1:
        raise ConfigError(f"query_pool must be >= 1 when set, got {query_pool}")
    if annotator_noise is not None and annotator_noise < 0:
        raise ConfigError(f"annotator_noise must be >= 0, got {annotator_noise}")

    out = Path(root)
    rng = np.random.default_rng(seed)
    prototypes = rng.uniform(-1.0, 1.0, size=(num_classes, feature_dim))
    frame_counts = rng.integers(lo, hi + 1, size=num_videos)
    target = int(max_frames) if max_frames is not None else int(frame_counts.max())
    if target < frame_counts.max():
        raise ConfigError(f"max_frames {target} is shorter than the longest video ({frame_counts.max()})")

    pool: List[List[int]] = []
    if with_queries and query_pool is not None:
        pool = [rng.integers(1, vocab_size, size=int(rng.integers(2, 7))).tolist() for _ in range(query_pool)]

    videos: List[Dict[str, Any]] = []
    for i, n in enumerate(frame_counts):
        vid = f"video_{i:03d}"
        n = int(n)
        latent = _latent_curve(rng, n)
        if highlight_budget is not None:
            latent = _with_highlight(latent, highlight_budget)
        scores = _annotator_scores(rng, latent, annotators, num_classes, score_kind, annotator_noise)
        classes = score_to_class(scores.mean(axis=0), num_classes, score_kind)
        frames = prototypes[classes - 1] + rng.normal(0.0, noise, size=(n, feature_dim))
        bounds = segment_boundaries(n, fps, SEGMENT_SECONDS)
        segments = np.stack([frames[a:b].mean(axis=0) for a, b in bounds])

        files = {
            "frame_features": f"features/{vid}.frames.f32",
            "segment_features": f"features/{vid}.segments.f32",
            "annotations": f"annotations/{vid}.json",
        }
        write_feature_file(out / files["frame_features"], frames)
        write_feature_file(out / files["segment_features"], segments)
        ann_path = out / files["annotations"]
        ann_path.parent.mkdir(parents=True, exist_ok=True)
        ann_path.write_text(json.dumps({"annotators": scores.tolist()}), encoding="utf-8")

        tokens: List[int] = []
        if pool:
            tokens = list(pool[i % len(pool)])
        elif with_queries:
            tokens = rng.integers(1, vocab_size, size=int(rng.integers(2, 7))).tolist()
        videos.append({
            "video_id": vid,
            "frame_count": n,
            "segment_count": len(bounds),
            "query_tokens": tokens,
            "annotator_count": annotators,
            "files": files,
        })

    vocab = {"<unk>": 0}
    vocab.update({f"word{k}": k for k in range(1, vocab_size)})
    (out / "vocab.json").write_text(json.dumps(vocab, indent=2), encoding="utf-8")

    manifest: Dict[str, Any] = {
        "dataset_name": dataset_name,
        "fps": fps,
        "num_classes": num_classes,
        "score_kind": score_kind,
        "max_frames": target,
        "vocab_size": vocab_size,
        "feature_dim": feature_dim,
        "vocab_file": "vocab.json",
        "videos": videos,
    }
    if split_counts is not None:
        manifest["split_counts"] = [int(c) for c in split_counts]
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    logger.info("wrote synthetic bundle %s: %d videos, %d-%d frames, d=%d", path, num_videos, lo, hi, feature_dim)
    return path


def preset_bundle(
    root: Union[str, Path], preset: str, seed: int = 0, feature_dim: int = DEFAULT_FEATURE_DIM, **overrides: Any
) -> Path:
    """A bundle shaped like one of the benchmark datasets (video count, split,
    repeat length, score kind); frame lengths stay at or below max_frames."""
    try:
        p = DATASET_PRESETS[preset]
    except KeyError:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(DATASET_PRESETS)}") from None
    counts = p["split_counts"]
    kwargs: Dict[str, Any] = dict(
        num_videos=sum(counts),
        frame_range=(max(1, p["max_frames"] // 3), p["max_frames"]),
        num_classes=p["num_classes"],
        score_kind=p["score_kind"],
        feature_dim=feature_dim,
        with_queries=p["with_queries"],
        dataset_name=preset,
        max_frames=p["max_frames"],
        split_counts=counts,
        seed=seed,
    )
    kwargs.update(overrides)
    if "num_videos" in overrides and "split_counts" not in overrides:
        kwargs["split_counts"] = None
    return write_synthetic_bundle(root, **kwargs)
