"""Two-phase training: pretrain on segment pseudo labels, then fine-tune on
frame labels, one video per Adam step."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from checkpoint import save_checkpoint
from config import DATASET_PRESETS, TrainConfig, config_hash
from dataset_io import Dataset, frame_repeat, split_dataset
from errors import DatasetError, TrainingError
from neural_core import AdamState, adam_step, cross_entropy
from pseudo_label import (
    SegmentPseudoLabels,
    aggregate_annotators,
    dataset_pseudo_labels,
    expected_segment_count,
    frame_class_ids,
    generate_pseudo_labels,
)
from query_model import ModelSpec, QuerySummarizer, VideoBatch

logger = logging.getLogger(__name__)


@dataclass
class TrainReport:
    phase: str
    seed: int
    config_hash: str
    epochs_run: int
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[Optional[float]] = field(default_factory=list)
    checkpoint_path: Optional[str] = None
    wall_clock_s: float = 0.0
    parameter_count: int = 0
    early_stopped: bool = False
    best_epoch: Optional[int] = None  # set when the best-validation parameters were kept

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, path: Union[str, Path]) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.to_json(), encoding="utf-8")
        return p


def compute_loss(logits: np.ndarray, labels) -> float:
    return cross_entropy(logits, labels)[0]


# --- data preparation ---

def model_spec_for(dataset: Dataset, config: TrainConfig) -> ModelSpec:
    m = dataset.manifest
    return ModelSpec(
        vocab_size=m.vocab_size,
        feature_dim=m.feature_dim,
        num_classes=m.num_classes,
        embed_dim=config.embed_dim,
        max_query_len=config.max_query_len,
        ffn_multiplier=config.ffn_multiplier,
        use_semantics_booster=config.use_semantics_booster,
        use_mutual_attention=config.use_mutual_attention,
    )


def build_model(dataset: Dataset, config: TrainConfig) -> QuerySummarizer:
    return QuerySummarizer.initialize(model_spec_for(dataset, config), config.seed, config.init_std)


def prepare_batch(
    dataset: Dataset,
    video_id: str,
    config: TrainConfig,
    pseudo_labels: Optional[SegmentPseudoLabels] = None,
    tokens: Optional[Sequence[int]] = None,
) -> VideoBatch:
    """Repeat frames to the dataset length and attach frame and segment targets.

    Segment boundaries are taken on original frames and lifted through the
    repeat map, so every repeated copy keeps its real segment.
    """
    m = dataset.manifest
    rec = dataset[video_id]
    feats, _, index_map = frame_repeat(rec.frame_features, rec.annotations, m.max_frames)

    if pseudo_labels is None:
        pseudo_labels = generate_pseudo_labels(
            aggregate_annotators(rec.annotations), m.fps, m.num_classes, m.score_kind,
            config.segment_seconds, config.pooling,
        )
    expected = expected_segment_count(rec.meta.frame_count, m.fps, config.segment_seconds)
    if rec.meta.segment_count != expected:
        raise DatasetError(
            f"{rec.meta.frame_count} frames at {m.fps} fps make {expected} {config.segment_seconds}-second "
            f"segments but there are {rec.meta.segment_count} segment feature rows",
            video_id=video_id, field="segment_count",
        )
    if len(pseudo_labels) != expected:
        raise DatasetError(
            f"{len(pseudo_labels)} pseudo labels for {expected} segments",
            video_id=video_id, field="pseudo_labels",
        )
    frame_labels = frame_class_ids(rec.annotations, m.num_classes, m.score_kind)[index_map]

    return VideoBatch(
        video_id=video_id,
        tokens=np.asarray(rec.meta.query_tokens if tokens is None else tokens, dtype=np.int64),
        frame_features=feats.values.astype(np.float64),
        segment_features=rec.segment_features.values.astype(np.float64),
        boundaries=tuple(pseudo_labels.boundaries),
        index_map=index_map,
        frame_count=rec.meta.frame_count,
        frame_labels=frame_labels,
        segment_labels=np.asarray(pseudo_labels.class_ids, dtype=np.int64),
    )


def prepare_batches(
    dataset: Dataset,
    video_ids: Sequence[str],
    config: TrainConfig,
    pseudo_labels: Optional[Mapping[str, SegmentPseudoLabels]] = None,
) -> List[VideoBatch]:
    batches = []
    for vid in video_ids:
        labels = None
        if pseudo_labels is not None:
            if vid not in pseudo_labels:
                raise TrainingError(f"no pseudo labels for video {vid}")
            labels = pseudo_labels[vid]
        batches.append(prepare_batch(dataset, vid, config, labels))
    return batches


def default_split_counts(total: int) -> Tuple[int, int, int]:
    held = max(1, round(0.1 * total)) if total >= 3 else 0
    return total - 2 * held, held, held


def resolve_split(
    dataset: Dataset, seed: int, counts: Optional[Sequence[int]] = None
) -> Tuple[List[str], List[str], List[str]]:
    """Split counts come from the argument, the manifest, a preset matching the
    dataset name, or a 80/10/10 default, in that order."""
    m = dataset.manifest
    if counts is None:
        counts = m.split_counts
    if counts is None:
        preset = DATASET_PRESETS.get(m.dataset_name.lower())
        if preset is not None and sum(preset["split_counts"]) == len(dataset):
            counts = preset["split_counts"]
    if counts is None:
        counts = default_split_counts(len(dataset))
    train, val, test = split_dataset(dataset, counts, seed)
    logger.info("split seed=%d: %d train / %d val / %d test", seed, len(train), len(val), len(test))
    return train, val, test


# --- training loop ---

def _snapshot(model: QuerySummarizer) -> Dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.params.items()}


def _mean_loss(model: QuerySummarizer, batches: Sequence[VideoBatch], granularity: str) -> Optional[float]:
    if not batches:
        return None
    return float(np.mean([model.loss(b, granularity) for b in batches]))


def _train(
    model: QuerySummarizer,
    train_batches: Sequence[VideoBatch],
    val_batches: Sequence[VideoBatch],
    config: TrainConfig,
    granularity: str,
    trainable: Optional[Sequence[str]] = None,
    out_dir: Optional[Union[str, Path]] = None,
    keep_best: bool = False,
) -> TrainReport:
    """Runs ``config.epochs`` epochs of phase ``config.phase``.

    With ``keep_best`` and a validation split, the parameters with the lowest
    validation loss are restored at the end; the starting parameters count as
    epoch 0.
    """
    phase = config.phase
    if config.epochs < 1:
        raise TrainingError(f"epochs must be >= 1, got {config.epochs}")
    if not train_batches:
        raise TrainingError("training split is empty")

    started = time.perf_counter()
    report = TrainReport(
        phase=phase, seed=config.seed, config_hash=config_hash(config),
        epochs_run=0, parameter_count=model.parameter_count(),
    )
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    rng = np.random.default_rng(config.seed)
    keep = set(trainable) if trainable is not None else None
    best_val = math.inf
    stale = 0

    best: Optional[Tuple[float, int, Dict[str, np.ndarray]]] = None
    if keep_best and val_batches:
        best = (_mean_loss(model, val_batches, granularity), 0, _snapshot(model))

    epochs = tqdm(range(1, config.epochs + 1), desc=phase, disable=not config.progress, leave=False)
    for epoch in epochs:
        losses = []
        for i in rng.permutation(len(train_batches)):
            batch = train_batches[i]
            loss, grads = model.loss_and_grads(batch, granularity)
            if not math.isfinite(loss):
                raise TrainingError(f"{phase}: non-finite loss {loss} at epoch {epoch} on video {batch.video_id}")
            if keep is not None:
                grads = {k: g for k, g in grads.items() if k in keep}
            adam_step(state, model.params, grads)
            losses.append(loss)

        train_loss = float(np.mean(losses))
        val_loss = _mean_loss(model, val_batches, granularity)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.epochs_run = epoch
        logger.info("%s epoch %d/%d: train loss %.6f, val loss %s", phase, epoch, config.epochs, train_loss,
                    "n/a" if val_loss is None else f"{val_loss:.6f}")
        if best is not None and val_loss is not None and val_loss < best[0]:
            best = (val_loss, epoch, _snapshot(model))

        if config.patience is not None and val_loss is not None:
            if val_loss < best_val:
                best_val, stale = val_loss, 0
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info("%s: no validation improvement for %d epochs, stopping at epoch %d",
                                phase, stale, epoch)
                    report.early_stopped = True
                    break

    if best is not None:
        for k, v in best[2].items():
            model.params[k][...] = v
        report.best_epoch = best[1]
        logger.info("%s: keeping epoch %d parameters (val loss %.6f)", phase, best[1], best[0])

    if out_dir is not None:
        out = Path(out_dir)
        ckpt = save_checkpoint(out / f"{phase}.ckpt", model.params, model.checkpoint_header(config.seed, report.config_hash))
        report.checkpoint_path = str(ckpt)
    report.wall_clock_s = time.perf_counter() - started
    if out_dir is not None:
        report.write(Path(out_dir) / f"{phase}_report.json")
    return report


def pretrain(
    model: QuerySummarizer,
    dataset: Dataset,
    pseudo_labels: Mapping[str, SegmentPseudoLabels],
    train_ids: Sequence[str],
    val_ids: Sequence[str],
    config: TrainConfig,
    out_dir: Optional[Union[str, Path]] = None,
) -> Tuple[QuerySummarizer, TrainReport]:
    """Pretext task: each frame's log-probability of its segment's pseudo
    label, averaged per segment. Keeps the best parameters on validation."""
    config = config.for_phase("pretrain")
    train_batches = prepare_batches(dataset, train_ids, config, pseudo_labels)
    val_batches = prepare_batches(dataset, val_ids, config, pseudo_labels)
    report = _train(model, train_batches, val_batches, config, "segment", out_dir=out_dir, keep_best=True)
    return model, report


def finetune(
    model: QuerySummarizer,
    dataset: Dataset,
    train_ids: Sequence[str],
    val_ids: Sequence[str],
    config: TrainConfig,
    out_dir: Optional[Union[str, Path]] = None,
) -> Tuple[QuerySummarizer, TrainReport]:
    """Target task: per-frame classes from the discretized annotator mean."""
    config = config.for_phase("finetune")
    train_batches = prepare_batches(dataset, train_ids, config)
    val_batches = prepare_batches(dataset, val_ids, config)
    trainable = model.head_keys() if config.freeze_trunk else None
    report = _train(model, train_batches, val_batches, config, "frame", trainable, out_dir)
    return model, report


def run_schedule(
    dataset: Dataset,
    train_ids: Sequence[str],
    val_ids: Sequence[str],
    config: TrainConfig,
    out_dir: Optional[Union[str, Path]] = None,
    model: Optional[QuerySummarizer] = None,
) -> Tuple[QuerySummarizer, List[TrainReport]]:
    """Pretrain (when enabled) then fine-tune the same parameters."""
    model = model if model is not None else build_model(dataset, config)
    reports = []
    if config.use_pretraining:
        labels = dataset_pseudo_labels(dataset, config.segment_seconds, config.pooling)
        model, rep = pretrain(model, dataset, labels, train_ids, val_ids, config, out_dir)
        reports.append(rep)
    model, rep = finetune(model, dataset, train_ids, val_ids, config, out_dir)
    reports.append(rep)
    return model, reports
