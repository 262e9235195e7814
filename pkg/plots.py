"""Loss curves and qualitative summary strips, written to image files."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from errors import EvaluationError  # noqa: E402
from training_pipeline import TrainReport  # noqa: E402


def plot_training_curves(reports: Union[TrainReport, Sequence[TrainReport]], path: Union[str, Path]) -> Path:
    """Train/val loss per epoch, one panel per phase."""
    if isinstance(reports, TrainReport):
        reports = [reports]
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)

    fig, axes = plt.subplots(1, len(reports), figsize=(6 * len(reports), 4), squeeze=False)
    for ax, rep in zip(axes[0], reports):
        epochs = np.arange(1, len(rep.train_loss) + 1)
        ax.plot(epochs, rep.train_loss, color="blue", linewidth=2, label="train loss")
        val = [np.nan if v is None else v for v in rep.val_loss]
        if not np.all(np.isnan(val)):
            ax.plot(epochs, val, color="green", linewidth=2, linestyle="--", label="val loss")
        ax.set_title(f"{rep.phase} (seed {rep.seed})")
        ax.set_xlabel("Epoch")
        ax.set_ylabel("Cross-entropy")
        ax.grid(True, linestyle="--", alpha=0.6)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_summary(
    scores: np.ndarray,
    selection: np.ndarray,
    gt_masks: Optional[Sequence[np.ndarray]],
    path: Union[str, Path],
    title: str = "Query-based summary",
) -> Path:
    """Expected-score curve over a frame strip.

    Strip rows: the predicted summary in green at the bottom, then one row per
    ground-truth mask (gray where selected, red elsewhere).
    """
    scores = np.asarray(scores, dtype=np.float64)
    selected = np.asarray(selection, dtype=bool)
    n = scores.shape[0]
    rows = [] if gt_masks is None else [np.asarray(m, dtype=bool) for m in gt_masks]
    if any(m.shape != (n,) for m in rows):
        raise EvaluationError(f"ground-truth masks must have {n} frames")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)

    fig, (top, strip) = plt.subplots(
        2, 1, figsize=(10, 4 + 0.3 * len(rows)), sharex=True,
        gridspec_kw={"height_ratios": [3, 1 + 0.5 * len(rows)]},
    )
    x = np.arange(n)
    top.plot(x, scores, color="black", linewidth=1.5)
    top.set_ylabel("Expected score")
    top.set_title(title)
    top.grid(True, linestyle="--", alpha=0.6)

    strip.bar(x[selected], np.ones(selected.sum()), width=1.0, bottom=0.0, color="green")
    for r, gt in enumerate(rows, start=1):
        strip.bar(x, np.ones(n), width=1.0, bottom=float(r), color=np.where(gt, "gray", "red"))
    labels = ["summary"] + (["ground truth"] if len(rows) == 1 else [f"annotator {r}" for r in range(1, len(rows) + 1)])
    strip.set_yticks([r + 0.5 for r in range(len(rows) + 1)])
    strip.set_yticklabels(labels)
    strip.set_xlabel("Frame")
    strip.set_xlim(-0.5, n - 0.5)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out
