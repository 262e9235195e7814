"""SQLite run registry.

Creates the tables on first use and records training, evaluation and
ablation runs so that results from different seeds and configurations can
be compared later.
"""
from __future__ import annotations

import json
import logging
from typing import Any, Dict, List, Optional, Sequence

from sqlalchemy import create_engine, select
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, selectinload

from models import Base, EpochRecord, Run, VideoScore

logger = logging.getLogger(__name__)

DB_URL = "sqlite:///vsum_runs.db"


def init_db(engine_url: str = DB_URL) -> Engine:
    engine = create_engine(engine_url, echo=False, future=True)
    Base.metadata.create_all(engine)
    logger.debug("run registry ready at %s", engine_url)
    return engine


def record_train_report(engine_url: str, report, dataset_name: str) -> int:
    """Store a TrainReport with one row per epoch; returns the run id."""
    engine = init_db(engine_url)
    with Session(engine) as session:
        run = Run(
            kind=report.phase,
            dataset_name=dataset_name,
            seed=report.seed,
            config_hash=report.config_hash,
            checkpoint_path=report.checkpoint_path,
            wall_clock_s=report.wall_clock_s,
            payload=report.to_json(),
        )
        run.epochs = [
            EpochRecord(phase=report.phase, epoch=i, train_loss=t, val_loss=v)
            for i, (t, v) in enumerate(zip(report.train_loss, report.val_loss), start=1)
        ]
        session.add(run)
        session.commit()
        logger.info("recorded %s run %d (%d epochs)", report.phase, run.id, len(run.epochs))
        return run.id


def record_eval_report(engine_url: str, report, dataset_name: str, seed: Optional[int] = None) -> int:
    engine = init_db(engine_url)
    with Session(engine) as session:
        run = Run(
            kind="evaluate",
            dataset_name=dataset_name,
            seed=seed,
            config_hash=report.config_hash,
            checkpoint_hash=report.checkpoint_hash,
            mean_f_beta=report.mean_f_beta,
            payload=report.to_json(),
        )
        run.video_scores = [VideoScore(video_id=v, f_beta=f) for v, f in sorted(report.per_video.items())]
        session.add(run)
        session.commit()
        logger.info("recorded evaluate run %d (mean F = %.4f)", run.id, report.mean_f_beta)
        return run.id


def record_ablation(engine_url: str, rows: Sequence[Any], dataset_name: str, seed: Optional[int] = None) -> List[int]:
    engine = init_db(engine_url)
    ids = []
    with Session(engine) as session:
        for row in rows:
            run = Run(
                kind="ablation",
                dataset_name=dataset_name,
                seed=seed,
                config_hash=row.config_hash,
                mean_f_beta=row.mean_f_beta,
                payload=json.dumps(vars(row), sort_keys=True),
            )
            session.add(run)
            session.flush()
            ids.append(run.id)
        session.commit()
    return ids


def list_runs(engine_url: str, kind: Optional[str] = None) -> List[Dict[str, Any]]:
    engine = init_db(engine_url)
    stmt = select(Run).options(selectinload(Run.epochs), selectinload(Run.video_scores)).order_by(Run.id)
    if kind is not None:
        stmt = stmt.where(Run.kind == kind)
    with Session(engine) as session:
        return [
            {
                "id": r.id,
                "kind": r.kind,
                "dataset_name": r.dataset_name,
                "seed": r.seed,
                "config_hash": r.config_hash,
                "checkpoint_path": r.checkpoint_path,
                "mean_f_beta": r.mean_f_beta,
                "epochs": len(r.epochs),
                "videos": len(r.video_scores),
                "created_at": r.created_at.isoformat(),
            }
            for r in session.scalars(stmt)
        ]
