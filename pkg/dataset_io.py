"""Dataset bundles: manifest parsing, float32 feature files, annotations,
frame-repeat preprocessing and seeded splits.

Bundle layout::

    manifest.json
    features/<video_id>.frames.f32     little-endian float32, row-major [n, d]
    features/<video_id>.segments.f32
    annotations/<video_id>.json        {"annotators": [[s_1, ..., s_n], ...]}
    vocab.json                         optional, token -> id (0 = pad/unknown)
"""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from errors import (
    DatasetError,
    DuplicateVideoError,
    ManifestError,
    MissingFileError,
    ScoreDomainError,
    ShapeMismatchError,
)

logger = logging.getLogger(__name__)

SCORE_KINDS = ("integer_categories", "continuous_unit_interval")
FEATURE_DTYPE = np.dtype("<f4")
DEFAULT_FEATURE_DIM = 512


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    frame_count: int
    segment_count: int
    query_tokens: Tuple[int, ...]
    annotator_count: Optional[int]
    files: Mapping[str, str]


@dataclass(frozen=True)
class DatasetManifest:
    dataset_name: str
    fps: int
    num_classes: int
    score_kind: str
    max_frames: int
    vocab_size: int
    feature_dim: int
    videos: Tuple[VideoMeta, ...]
    root: Path
    split_counts: Optional[Tuple[int, int, int]] = None
    vocab_file: Optional[str] = None


@dataclass(frozen=True)
class FeatureTensor:
    values: np.ndarray
    granularity: str  # frame|segment

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class AnnotationSet:
    scores: np.ndarray  # [annotators, frames]

    @property
    def annotator_count(self) -> int:
        return self.scores.shape[0]

    @property
    def frame_count(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class VideoRecord:
    meta: VideoMeta
    frame_features: FeatureTensor
    segment_features: FeatureTensor
    annotations: AnnotationSet


@dataclass(frozen=True)
class Dataset:
    manifest: DatasetManifest
    videos: Mapping[str, VideoRecord] = field(default_factory=dict)

    @property
    def video_ids(self) -> List[str]:
        return [v.video_id for v in self.manifest.videos]

    def __getitem__(self, video_id: str) -> VideoRecord:
        try:
            return self.videos[video_id]
        except KeyError:
            raise DatasetError("unknown video id", video_id=video_id) from None

    def __len__(self) -> int:
        return len(self.videos)


# --- validation helpers ---

def validate_scores(scores: np.ndarray, score_kind: str, num_classes: int) -> bool:
    if scores.size == 0 or not np.all(np.isfinite(scores)):
        return False
    if score_kind == "integer_categories":
        return bool(np.all(scores == np.round(scores)) and scores.min() >= 1 and scores.max() <= num_classes)
    return bool(scores.min() >= 0.0 and scores.max() <= 1.0)


def validate_tokens(tokens: Sequence[int], vocab_size: int) -> bool:
    return all(isinstance(t, int) and 0 <= t < vocab_size for t in tokens)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# --- raw feature files ---

def read_feature_file(path: Path, rows: int, cols: int, granularity: str, video_id: str) -> FeatureTensor:
    fld = f"{granularity}_features"
    if not path.exists():
        raise MissingFileError(f"feature file not found: {path}", video_id=video_id, field=fld)
    expected = rows * cols * FEATURE_DTYPE.itemsize
    actual = path.stat().st_size
    if actual != expected:
        held = actual / (cols * FEATURE_DTYPE.itemsize)
        raise ShapeMismatchError(
            f"{path.name} holds {actual} bytes ({held:g} rows of {cols}), expected {rows} rows = {expected} bytes",
            video_id=video_id,
            field=fld,
        )
    values = np.fromfile(path, dtype=FEATURE_DTYPE).reshape(rows, cols)
    if not np.all(np.isfinite(values)):
        raise ShapeMismatchError("feature file contains NaN or Inf", video_id=video_id, field=fld)
    return FeatureTensor(values=_frozen(values), granularity=granularity)


def write_feature_file(path: Path, values: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(values, dtype=FEATURE_DTYPE).tofile(path)


# --- manifest ---

def _require(data: dict, key: str, video_id: Optional[str] = None):
    if key not in data:
        raise ManifestError("missing required key", video_id=video_id, field=key)
    return data[key]


def _positive_int(value, key: str, video_id: Optional[str] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ManifestError(f"must be a positive integer, got {value!r}", video_id=video_id, field=key)
    return value


def parse_manifest(manifest_path: Union[str, Path]) -> DatasetManifest:
    path = Path(manifest_path)
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}", field="manifest")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {e}", field="manifest") from e

    score_kind = _require(data, "score_kind")
    if score_kind not in SCORE_KINDS:
        raise ManifestError(f"score_kind must be one of {SCORE_KINDS}", field="score_kind")
    num_classes = _positive_int(_require(data, "num_classes"), "num_classes")
    if num_classes < 2:
        raise ManifestError("num_classes must be >= 2", field="num_classes")
    max_frames = _positive_int(_require(data, "max_frames"), "max_frames")
    fps = _positive_int(_require(data, "fps"), "fps")
    vocab_size = _positive_int(_require(data, "vocab_size"), "vocab_size")
    feature_dim = _positive_int(data.get("feature_dim", DEFAULT_FEATURE_DIM), "feature_dim")

    videos: List[VideoMeta] = []
    seen = set()
    for raw in _require(data, "videos"):
        vid = str(_require(raw, "video_id"))
        if vid in seen:
            raise DuplicateVideoError("duplicate video id", video_id=vid, field="video_id")
        seen.add(vid)
        frame_count = _positive_int(_require(raw, "frame_count", vid), "frame_count", vid)
        segment_count = _positive_int(_require(raw, "segment_count", vid), "segment_count", vid)
        tokens = raw.get("query_tokens", []) or []
        if not validate_tokens(tokens, vocab_size):
            raise ManifestError(f"token ids must be integers in [0, {vocab_size})", video_id=vid, field="query_tokens")
        annotator_count = raw.get("annotator_count")
        if annotator_count is not None:
            _positive_int(annotator_count, "annotator_count", vid)
        files = _require(raw, "files", vid)
        for key in ("frame_features", "segment_features", "annotations"):
            _require(files, key, vid)
        if frame_count > max_frames:
            raise ManifestError(
                f"frame_count {frame_count} exceeds max_frames {max_frames}", video_id=vid, field="frame_count"
            )
        videos.append(
            VideoMeta(
                video_id=vid,
                frame_count=frame_count,
                segment_count=segment_count,
                query_tokens=tuple(tokens),
                annotator_count=annotator_count,
                files=MappingProxyType(dict(files)),
            )
        )

    split_counts = data.get("split_counts")
    if split_counts is not None:
        split_counts = tuple(int(c) for c in split_counts)
        if len(split_counts) != 3 or sum(split_counts) != len(videos):
            raise ManifestError("split_counts must be three counts summing to the video count", field="split_counts")

    return DatasetManifest(
        dataset_name=str(_require(data, "dataset_name")),
        fps=fps,
        num_classes=num_classes,
        score_kind=score_kind,
        max_frames=max_frames,
        vocab_size=vocab_size,
        feature_dim=feature_dim,
        videos=tuple(videos),
        root=path.parent,
        split_counts=split_counts,
        vocab_file=data.get("vocab_file"),
    )


def load_annotations(path: Path, meta: VideoMeta, score_kind: str, num_classes: int) -> AnnotationSet:
    if not path.exists():
        raise MissingFileError(f"annotation file not found: {path}", video_id=meta.video_id, field="annotations")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"annotation file is not valid JSON: {e}", video_id=meta.video_id, field="annotations") from e
    annotators = raw.get("annotators") if isinstance(raw, dict) else None
    if not annotators:
        raise DatasetError("no annotator sequences", video_id=meta.video_id, field="annotations")
    lengths = {len(a) for a in annotators}
    if lengths != {meta.frame_count}:
        raise ShapeMismatchError(
            f"annotator sequence lengths {sorted(lengths)} != frame_count {meta.frame_count}",
            video_id=meta.video_id,
            field="annotations",
        )
    if meta.annotator_count is not None and meta.annotator_count != len(annotators):
        raise ShapeMismatchError(
            f"{len(annotators)} annotators on file, manifest declares {meta.annotator_count}",
            video_id=meta.video_id,
            field="annotator_count",
        )
    scores = np.asarray(annotators, dtype=np.float64)
    if not validate_scores(scores, score_kind, num_classes):
        domain = f"integers in [1, {num_classes}]" if score_kind == "integer_categories" else "reals in [0, 1]"
        raise ScoreDomainError(f"scores must be {domain}", video_id=meta.video_id, field="annotations")
    return AnnotationSet(scores=_frozen(scores))


def _load_video(manifest: DatasetManifest, meta: VideoMeta) -> VideoRecord:
    root = manifest.root
    d = manifest.feature_dim
    frames = read_feature_file(root / meta.files["frame_features"], meta.frame_count, d, "frame", meta.video_id)
    segments = read_feature_file(root / meta.files["segment_features"], meta.segment_count, d, "segment", meta.video_id)
    annotations = load_annotations(root / meta.files["annotations"], meta, manifest.score_kind, manifest.num_classes)
    logger.debug("loaded %s: %d frames, %d segments, %d annotators",
                 meta.video_id, meta.frame_count, meta.segment_count, annotations.annotator_count)
    return VideoRecord(meta=meta, frame_features=frames, segment_features=segments, annotations=annotations)


def load_dataset(manifest_path: Union[str, Path], workers: int = 4) -> Dataset:
    """Parse and fully validate a bundle. Videos are read in parallel."""
    manifest = parse_manifest(manifest_path)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        records = list(pool.map(lambda m: _load_video(manifest, m), manifest.videos))
    videos = MappingProxyType({r.meta.video_id: r for r in records})
    logger.info("loaded dataset %s: %d videos (C=%d, M=%d, fps=%d)",
                manifest.dataset_name, len(records), manifest.num_classes, manifest.max_frames, manifest.fps)
    return Dataset(manifest=manifest, videos=videos)


# --- preprocessing ---

def repeat_index_map(frame_count: int, target_len: int) -> np.ndarray:
    """Uniform duplication in temporal order; earlier frames take the extra repeats."""
    if frame_count < 1:
        raise DatasetError(f"frame_count must be >= 1, got {frame_count}", field="frame_count")
    if frame_count > target_len:
        raise DatasetError(f"frame_count {frame_count} exceeds target length {target_len}", field="frame_count")
    base, extra = divmod(target_len, frame_count)
    counts = np.full(frame_count, base, dtype=np.int64)
    counts[:extra] += 1
    return np.repeat(np.arange(frame_count, dtype=np.int64), counts)


def frame_repeat(
    features: FeatureTensor, scores: AnnotationSet, target_len: int
) -> Tuple[FeatureTensor, AnnotationSet, np.ndarray]:
    n = len(features)
    if scores.frame_count != n:
        raise ShapeMismatchError(f"annotations cover {scores.frame_count} frames, features {n}", field="annotations")
    index_map = repeat_index_map(n, target_len)
    if target_len == n:
        return features, scores, index_map
    return (
        FeatureTensor(values=_frozen(features.values[index_map]), granularity=features.granularity),
        AnnotationSet(scores=_frozen(scores.scores[:, index_map])),
        index_map,
    )


def split_dataset(
    dataset: Union[Dataset, Sequence[str]], ratios: Sequence[int], seed: int
) -> Tuple[List[str], List[str], List[str]]:
    """Seeded split by video id; ``ratios`` are counts, not fractions."""
    ids = sorted(dataset.video_ids if isinstance(dataset, Dataset) else dataset)
    counts = [int(c) for c in ratios]
    if len(counts) != 3 or any(c < 0 for c in counts) or sum(counts) != len(ids):
        raise DatasetError(f"split counts {tuple(ratios)} must be three non-negative counts summing to {len(ids)}",
                           field="split_counts")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    a, b = counts[0], counts[0] + counts[1]
    return shuffled[:a], shuffled[a:b], shuffled[b:]


# --- queries ---

def load_vocab(path: Union[str, Path]) -> Dict[str, int]:
    p = Path(path)
    if not p.exists():
        raise MissingFileError(f"vocabulary file not found: {p}", field="vocab")
    vocab = json.loads(p.read_text(encoding="utf-8"))
    if not isinstance(vocab, dict) or not all(isinstance(v, int) for v in vocab.values()):
        raise DatasetError("vocab.json must map token strings to integer ids", field="vocab")
    return vocab


def tokenize_query(text: str, vocab: Mapping[str, int]) -> List[int]:
    return [vocab.get(w, 0) for w in re.findall(r"[a-z0-9']+", text.lower())]
