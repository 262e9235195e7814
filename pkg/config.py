"""Run configuration: published defaults, JSON loading and stable hashing."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, ClassVar, Dict, Literal, Optional, Tuple, Union, get_args

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from errors import ConfigError


Phase = Literal["pretrain", "finetune"]
Pooling = Literal["mean", "max", "median"]
GtMode = Literal["per_annotator", "consensus"]
GT_MODES = get_args(GtMode)


def _describe(err: ValidationError, section: str) -> str:
    parts = []
    for e in err.errors():
        where = ".".join(str(x) for x in e["loc"]) or "<root>"
        parts.append(f"{section}.{where}: {e['msg']} (got {e.get('input')!r})")
    return "; ".join(parts)


class _Section(BaseModel):
    """Strict, closed config section: "5" is not an int and unknown keys fail."""
    model_config = ConfigDict(strict=True, extra="forbid")

    section: ClassVar[str] = "config"

    def __init__(self, **data: Any):
        try:
            super().__init__(**data)
        except ValidationError as e:
            raise ConfigError(_describe(e, self.section)) from None

    def updated(self, **changes: Any):
        """A validated copy with ``changes`` applied."""
        return type(self)(**{**self.model_dump(), **changes})


class TrainConfig(_Section):
    section: ClassVar[str] = "train"

    epochs: int = Field(100, ge=1)
    # pretraining length; None reuses ``epochs``
    pretrain_epochs: Optional[int] = Field(None, ge=1)
    lr: float = Field(1e-7, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    seed: int = 0
    phase: Phase = "finetune"
    use_pretraining: bool = True
    use_mutual_attention: bool = True
    use_semantics_booster: bool = True
    freeze_trunk: bool = False
    patience: Optional[int] = Field(None, ge=1)
    segment_seconds: int = Field(2, ge=1)
    pooling: Pooling = "mean"  # segment score reduction
    embed_dim: int = Field(64, ge=1)
    max_query_len: int = Field(64, ge=1)
    ffn_multiplier: int = Field(4, ge=1)
    init_std: Optional[float] = Field(None, gt=0)  # None -> 1/sqrt(fan_in)
    progress: bool = True

    def for_phase(self, phase: str) -> "TrainConfig":
        """The settings one phase of the schedule runs with."""
        changes: Dict[str, Any] = {"phase": phase}
        if phase == "pretrain" and self.pretrain_epochs is not None:
            changes["epochs"] = self.pretrain_epochs
        return self.updated(**changes)


class EvalConfig(_Section):
    section: ClassVar[str] = "eval"

    budget: float = Field(0.15, gt=0, le=1)
    beta: float = Field(1.0, gt=0)
    gt_mode: GtMode = "per_annotator"


# split counts are (train, val, test); max_frames is the frame-repeat target length
DATASET_PRESETS: Dict[str, Dict[str, Any]] = {
    "tvsum": {
        "split_counts": (40, 5, 5),
        "max_frames": 647,
        "num_classes": 5,
        "score_kind": "integer_categories",
        "with_queries": True,
    },
    "summe": {
        "split_counts": (19, 3, 3),
        "max_frames": 388,
        "num_classes": 5,
        "score_kind": "continuous_unit_interval",
        "with_queries": False,
    },
    "queryvs": {
        "split_counts": (114, 38, 38),
        "max_frames": 199,
        "num_classes": 5,
        "score_kind": "integer_categories",
        "with_queries": True,
    },
}


def _build(cls, raw: Optional[Dict[str, Any]], section: str):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config section '{section}' must be an object")
    return cls(**raw)


def load_config(path: Optional[Union[str, Path]] = None) -> Tuple[TrainConfig, EvalConfig]:
    """Read a JSON config with optional "train" and "eval" sections."""
    if path is None:
        return TrainConfig(), EvalConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(data) - {"train", "eval"})
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    return _build(TrainConfig, data.get("train"), "train"), _build(EvalConfig, data.get("eval"), "eval")


def config_dict(train: TrainConfig, evaluation: Optional[EvalConfig] = None) -> Dict[str, Any]:
    out: Dict[str, Any] = {"train": train.model_dump()}
    if evaluation is not None:
        out["eval"] = evaluation.model_dump()
    return out


def config_hash(train: TrainConfig, evaluation: Optional[EvalConfig] = None) -> str:
    d = config_dict(train, evaluation)
    # progress bars do not change results
    d["train"].pop("progress", None)
    canonical = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def default_config_dict() -> Dict[str, Any]:
    return config_dict(TrainConfig(), EvalConfig())
