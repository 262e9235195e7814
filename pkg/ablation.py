"""Component ablation: train and score the five configurations that switch
pseudo-label pretraining, mutual attention and the semantics booster on
one at a time."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from config import EvalConfig, TrainConfig
from dataset_io import Dataset
from evaluation import evaluate
from training_pipeline import run_schedule

logger = logging.getLogger(__name__)

# (name, use_pretraining, use_mutual_attention, use_semantics_booster)
ABLATION_ROWS: Tuple[Tuple[str, bool, bool, bool], ...] = (
    ("baseline", False, False, False),
    ("pretraining", True, False, False),
    ("mutual_attention", False, True, False),
    ("semantics_booster", False, False, True),
    ("full", True, True, True),
)


@dataclass
class AblationRow:
    name: str
    use_pretraining: bool
    use_mutual_attention: bool
    use_semantics_booster: bool
    mean_f_beta: float
    parameter_count: int
    final_train_loss: float
    config_hash: str


def run_ablation(
    dataset: Dataset,
    split: Tuple[Sequence[str], Sequence[str], Sequence[str]],
    train_config: TrainConfig,
    eval_config: Optional[EvalConfig] = None,
) -> List[AblationRow]:
    """Every row starts from the same seed; only the three flags differ."""
    train_ids, val_ids, test_ids = split
    eval_config = eval_config or EvalConfig()
    rows = []
    for name, pre, mutual, booster in ABLATION_ROWS:
        cfg = train_config.updated(
            use_pretraining=pre,
            use_mutual_attention=mutual,
            use_semantics_booster=booster,
        )
        logger.info("ablation %s: pretraining=%s mutual=%s booster=%s", name, pre, mutual, booster)
        model, reports = run_schedule(dataset, train_ids, val_ids, cfg)
        report = evaluate(model, dataset, test_ids, eval_config, cfg)
        rows.append(AblationRow(
            name=name,
            use_pretraining=pre,
            use_mutual_attention=mutual,
            use_semantics_booster=booster,
            mean_f_beta=report.mean_f_beta,
            parameter_count=model.parameter_count(),
            final_train_loss=reports[-1].train_loss[-1],
            config_hash=report.config_hash,
        ))
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> Dict[str, list]:
    return {"rows": [asdict(r) for r in rows]}


def write_ablation_table(path: Union[str, Path], rows: Sequence[AblationRow]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(ablation_table(rows), indent=2, sort_keys=True), encoding="utf-8")
    return p
