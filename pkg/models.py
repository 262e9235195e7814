from __future__ import annotations

from datetime import datetime, timezone
from typing import List, Optional

from sqlalchemy import DateTime, Float, ForeignKey, Integer, String, Text, UniqueConstraint
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class Base(DeclarativeBase):
    pass


class Run(Base):
    __tablename__ = "runs"

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    kind: Mapped[str] = mapped_column(String(50), nullable=False)  # pretrain|finetune|evaluate|ablation
    dataset_name: Mapped[str] = mapped_column(String(200), nullable=False)
    seed: Mapped[Optional[int]] = mapped_column(Integer, nullable=True)
    config_hash: Mapped[Optional[str]] = mapped_column(String(64), nullable=True)
    checkpoint_path: Mapped[Optional[str]] = mapped_column(String(500), nullable=True)
    checkpoint_hash: Mapped[Optional[str]] = mapped_column(String(64), nullable=True)
    wall_clock_s: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    mean_f_beta: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    created_at: Mapped[datetime] = mapped_column(DateTime, default=_utcnow, nullable=False)
    payload: Mapped[Optional[str]] = mapped_column(Text, nullable=True)  # JSON report as text

    epochs: Mapped[List["EpochRecord"]] = relationship(
        back_populates="run", cascade="all, delete-orphan", order_by="EpochRecord.epoch"
    )
    video_scores: Mapped[List["VideoScore"]] = relationship(
        back_populates="run", cascade="all, delete-orphan", order_by="VideoScore.video_id"
    )

    def __repr__(self) -> str:
        return f"<Run id={self.id} kind={self.kind} dataset='{self.dataset_name}' seed={self.seed}>"


class EpochRecord(Base):
    __tablename__ = "epoch_records"

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    run_id: Mapped[int] = mapped_column(Integer, ForeignKey("runs.id"), nullable=False)
    phase: Mapped[str] = mapped_column(String(50), nullable=False)
    epoch: Mapped[int] = mapped_column(Integer, nullable=False)
    train_loss: Mapped[float] = mapped_column(Float, nullable=False)
    val_loss: Mapped[Optional[float]] = mapped_column(Float, nullable=True)

    run: Mapped[Run] = relationship(back_populates="epochs")

    __table_args__ = (UniqueConstraint("run_id", "phase", "epoch", name="u_run_phase_epoch"),)

    def __repr__(self) -> str:
        return f"<EpochRecord run={self.run_id} {self.phase} epoch={self.epoch} loss={self.train_loss:.4f}>"


class VideoScore(Base):
    __tablename__ = "video_scores"

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    run_id: Mapped[int] = mapped_column(Integer, ForeignKey("runs.id"), nullable=False)
    video_id: Mapped[str] = mapped_column(String(200), nullable=False)
    f_beta: Mapped[float] = mapped_column(Float, nullable=False)

    run: Mapped[Run] = relationship(back_populates="video_scores")

    __table_args__ = (UniqueConstraint("run_id", "video_id", name="u_run_video"),)

    def __repr__(self) -> str:
        return f"<VideoScore run={self.run_id} video={self.video_id} f={self.f_beta:.4f}>"
