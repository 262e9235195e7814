"""Segment-level pseudo labels from frame-level human scores.

Frames are cut into fixed two-second windows; each window's label is the mean
of its frame scores, discretized to a class id with the same policy used for
frame-level targets.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from errors import DatasetError, ScoreDomainError
from dataset_io import AnnotationSet, Dataset, validate_scores

logger = logging.getLogger(__name__)

SEGMENT_SECONDS = 2

Boundary = Tuple[int, int]

_POOLERS = {
    "mean": np.mean,
    "max": np.max,
    "median": np.median,
}


@dataclass(frozen=True)
class SegmentPseudoLabels:
    boundaries: Tuple[Boundary, ...]
    mean_scores: np.ndarray
    class_ids: np.ndarray  # 1-based

    def __len__(self) -> int:
        return len(self.boundaries)

    def to_json(self) -> dict:
        return {
            "segments": [
                {"start": s, "end": e, "mean": float(m), "class": int(c)}
                for (s, e), m, c in zip(self.boundaries, self.mean_scores, self.class_ids)
            ]
        }


def segment_boundaries(frame_count: int, fps: int, segment_seconds: int = SEGMENT_SECONDS) -> Tuple[Boundary, ...]:
    if frame_count < 1 or fps < 1 or segment_seconds < 1:
        raise DatasetError(
            f"frame_count, fps and segment_seconds must be positive (got {frame_count}, {fps}, {segment_seconds})"
        )
    length = segment_seconds * fps
    return tuple((s, min(s + length, frame_count)) for s in range(0, frame_count, length))


def segment_index(boundaries: Sequence[Boundary], num_frames: int) -> np.ndarray:
    """Segment id of every frame; raises if the boundaries leave a gap."""
    idx = np.full(num_frames, -1, dtype=np.int64)
    for k, (s, e) in enumerate(boundaries):
        idx[s:e] = k
    if num_frames == 0 or np.any(idx < 0) or boundaries[-1][1] != num_frames:
        raise DatasetError(f"segment boundaries do not cover {num_frames} frames")
    return idx


def score_to_class(values: Union[float, np.ndarray], num_classes: int, score_kind: str) -> np.ndarray:
    """Discretize scores into 1-based class ids.

    Integer categories round half away from zero; continuous unit-interval
    scores fall into ``num_classes`` equal-width bins (1.0 goes to the top bin).
    """
    v = np.asarray(values, dtype=np.float64)
    if score_kind == "integer_categories":
        cls = np.sign(v) * np.floor(np.abs(v) + 0.5)
    else:
        cls = np.floor(v * num_classes) + 1
    return np.clip(cls, 1, num_classes).astype(np.int64)


def aggregate_annotators(annotations: Union[AnnotationSet, Sequence[Sequence[float]]]) -> np.ndarray:
    if isinstance(annotations, AnnotationSet):
        rows = annotations.scores
    else:
        if len(annotations) == 0:
            raise DatasetError("at least one annotator is required", field="annotations")
        if len({len(a) for a in annotations}) != 1:
            raise DatasetError("annotator sequences differ in length", field="annotations")
        rows = np.asarray(annotations, dtype=np.float64)
    if rows.shape[0] < 1:
        raise DatasetError("at least one annotator is required", field="annotations")
    return rows.mean(axis=0)


def generate_pseudo_labels(
    scores: Sequence[float],
    fps: int,
    num_classes: int,
    score_kind: str,
    segment_seconds: int = SEGMENT_SECONDS,
    pooling: str = "mean",
) -> SegmentPseudoLabels:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise DatasetError("frame scores must be a non-empty sequence", field="scores")
    if score_kind == "continuous_unit_interval":
        ok = validate_scores(s, score_kind, num_classes)
    else:
        # annotator means of integer categories are reals in [1, C]
        ok = bool(np.all(np.isfinite(s)) and s.min() >= 1 and s.max() <= num_classes)
    if not ok:
        raise ScoreDomainError(f"frame scores outside the {score_kind} domain", field="scores")
    try:
        pool = _POOLERS[pooling]
    except KeyError:
        raise DatasetError(f"unknown pooling {pooling!r}", field="pooling") from None

    bounds = segment_boundaries(len(s), fps, segment_seconds)
    means = np.array([pool(s[a:b]) for a, b in bounds], dtype=np.float64)
    return SegmentPseudoLabels(
        boundaries=bounds,
        mean_scores=means,
        class_ids=score_to_class(means, num_classes, score_kind),
    )


def frame_class_ids(annotations: AnnotationSet, num_classes: int, score_kind: str) -> np.ndarray:
    return score_to_class(aggregate_annotators(annotations), num_classes, score_kind)


def dataset_pseudo_labels(
    dataset: Dataset, segment_seconds: int = SEGMENT_SECONDS, pooling: str = "mean"
) -> Dict[str, SegmentPseudoLabels]:
    m = dataset.manifest
    out: Dict[str, SegmentPseudoLabels] = {}
    for vid in dataset.video_ids:
        frame_scores = aggregate_annotators(dataset[vid].annotations)
        out[vid] = generate_pseudo_labels(frame_scores, m.fps, m.num_classes, m.score_kind, segment_seconds, pooling)
    return out


def write_pseudo_labels(labels: Dict[str, SegmentPseudoLabels], out_dir: Union[str, Path]) -> List[Path]:
    target = Path(out_dir) / "pseudo"
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for vid, lab in sorted(labels.items()):
        p = target / f"{vid}.json"
        p.write_text(json.dumps(lab.to_json(), indent=2), encoding="utf-8")
        written.append(p)
    logger.info("wrote %d pseudo-label files to %s", len(written), target)
    return written


def expected_segment_count(frame_count: int, fps: int, segment_seconds: int = SEGMENT_SECONDS) -> int:
    return math.ceil(frame_count / (segment_seconds * fps))
