"""Command-line entrypoint.

    python vsum.py make-fixture --out data/toy
    python vsum.py pretrain --manifest data/toy/manifest.json --out runs/a
    python vsum.py finetune --manifest data/toy/manifest.json --init runs/a/pretrain.ckpt --out runs/a
    python vsum.py evaluate --manifest data/toy/manifest.json --checkpoint runs/a/finetune.ckpt --report runs/a/eval.json
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from ablation import run_ablation, write_ablation_table
from checkpoint import file_sha256, load_checkpoint
from config import DATASET_PRESETS, GT_MODES, EvalConfig, TrainConfig, load_config
from dataset_io import Dataset, load_dataset, load_vocab, tokenize_query
from errors import ConfigError, VsumError
from evaluation import evaluate_checkpoint, ground_truth_masks, summarize_batch, write_plot_csv
from plots import plot_summary, plot_training_curves
from pseudo_label import dataset_pseudo_labels, write_pseudo_labels
from query_model import QuerySummarizer
from run_registry import list_runs, record_ablation, record_eval_report, record_train_report
from synthetic import preset_bundle, write_synthetic_bundle
from training_pipeline import (
    TrainReport,
    build_model,
    finetune,
    prepare_batch,
    pretrain,
    resolve_split,
    run_schedule,
)

logger = logging.getLogger("vsum")


# --- shared helpers ---

def _configs(args) -> tuple[TrainConfig, EvalConfig]:
    train, evaluation = load_config(getattr(args, "config", None))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        overrides["lr"] = args.lr
    if getattr(args, "no_progress", False):
        overrides["progress"] = False
    if overrides:
        train = train.updated(**overrides)
    eval_overrides = {}
    for name in ("budget", "beta", "gt_mode"):
        if getattr(args, name, None) is not None:
            eval_overrides[name] = getattr(args, name)
    if eval_overrides:
        evaluation = evaluation.updated(**eval_overrides)
    return train, evaluation


def _split(dataset: Dataset, seed: int, which: str) -> List[str]:
    train, val, test = resolve_split(dataset, seed)
    return {"train": train, "val": val, "test": test, "all": dataset.video_ids}[which]


def _load_model(path: str) -> QuerySummarizer:
    params, header = load_checkpoint(path)
    return QuerySummarizer.from_checkpoint(params, header)


def _record_train(args, reports: Sequence[TrainReport], dataset: Dataset) -> None:
    if args.registry:
        for rep in reports:
            record_train_report(args.registry, rep, dataset.manifest.dataset_name)


def _finish_training(args, reports: Sequence[TrainReport], dataset: Dataset) -> None:
    _record_train(args, reports, dataset)
    if args.plot:
        plot_training_curves(list(reports), Path(args.out) / "loss.png")
    for rep in reports:
        print(rep.to_json())


# --- subcommands ---

def cmd_make_fixture(args) -> int:
    if args.preset:
        path = preset_bundle(args.out, args.preset, seed=args.seed, feature_dim=args.feature_dim)
    else:
        path = write_synthetic_bundle(
            args.out,
            num_videos=args.videos,
            frame_range=tuple(args.frames),
            fps=args.fps,
            num_classes=args.classes,
            score_kind=args.score_kind,
            feature_dim=args.feature_dim,
            vocab_size=args.vocab_size,
            annotators=args.annotators,
            seed=args.seed,
            with_queries=not args.no_queries,
        )
    print(path)
    return 0


def cmd_pseudo_labels(args) -> int:
    train, _ = _configs(args)
    dataset = load_dataset(args.manifest)
    labels = dataset_pseudo_labels(dataset, train.segment_seconds, train.pooling)
    write_pseudo_labels(labels, args.out)
    return 0


def cmd_pretrain(args) -> int:
    train, _ = _configs(args)
    dataset = load_dataset(args.manifest)
    train_ids, val_ids, _ = resolve_split(dataset, train.seed)
    labels = dataset_pseudo_labels(dataset, train.segment_seconds, train.pooling)
    model = build_model(dataset, train)
    _, report = pretrain(model, dataset, labels, train_ids, val_ids, train, args.out)
    _finish_training(args, [report], dataset)
    return 0


def cmd_finetune(args) -> int:
    train, _ = _configs(args)
    dataset = load_dataset(args.manifest)
    train_ids, val_ids, _ = resolve_split(dataset, train.seed)
    reports: List[TrainReport]
    if args.init:
        model = _load_model(args.init)
        logger.info("fine-tuning from %s", args.init)
        _, report = finetune(model, dataset, train_ids, val_ids, train, args.out)
        reports = [report]
    else:
        _, reports = run_schedule(dataset, train_ids, val_ids, train, args.out)
    _finish_training(args, reports, dataset)
    return 0


def cmd_evaluate(args) -> int:
    train, evaluation = _configs(args)
    dataset = load_dataset(args.manifest)
    ids = _split(dataset, train.seed, args.split)
    report = evaluate_checkpoint(args.checkpoint, dataset, ids, evaluation, train)
    if args.report:
        report.write(args.report)
    if args.registry:
        record_eval_report(args.registry, report, dataset.manifest.dataset_name, train.seed)
    print(report.to_json())
    return 0


def cmd_summarize(args) -> int:
    train, evaluation = _configs(args)
    dataset = load_dataset(args.manifest)
    model = _load_model(args.checkpoint)
    tokens = None
    if args.query is not None:
        m = dataset.manifest
        if m.vocab_file is None:
            raise ConfigError("--query needs a vocab_file entry in the manifest")
        tokens = tokenize_query(args.query, load_vocab(m.root / m.vocab_file))
        logger.info("query %r -> tokens %s", args.query, tokens)
    batch = prepare_batch(dataset, args.video, train, tokens=tokens)
    selection = summarize_batch(model, batch, evaluation.budget)

    result = {
        "video_id": args.video,
        "budget": evaluation.budget,
        "selected": selection.selected.tolist(),
        "mask": selection.mask.astype(int).tolist(),
        "scores": selection.scores.tolist(),
        "checkpoint_hash": file_sha256(args.checkpoint),
    }
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)
    if args.csv:
        write_plot_csv(args.csv, selection)
    if args.plot:
        gt = ground_truth_masks(dataset[args.video].annotations.scores, evaluation.budget, evaluation.gt_mode)
        plot_summary(selection.scores, selection.mask, gt, args.plot, title=args.query or args.video)
    return 0


def cmd_ablation(args) -> int:
    train, evaluation = _configs(args)
    dataset = load_dataset(args.manifest)
    split = resolve_split(dataset, train.seed)
    rows = run_ablation(dataset, split, train, evaluation)
    write_ablation_table(args.out, rows)
    if args.registry:
        record_ablation(args.registry, rows, dataset.manifest.dataset_name, train.seed)
    for r in rows:
        print(f"{r.name:<20} F={r.mean_f_beta:.4f} params={r.parameter_count} loss={r.final_train_loss:.4f}")
    return 0


def cmd_grad_check(args) -> int:
    train, _ = _configs(args)
    dataset = load_dataset(args.manifest)
    vid = args.video or dataset.video_ids[0]
    model = build_model(dataset, train)
    batch = prepare_batch(dataset, vid, train)
    report = model.check_gradients(batch, args.granularity, args.max_entries, seed=train.seed)
    for name, err in sorted(report.per_param.items()):
        print(f"{name:<12} {err:.3e}")
    ok = report.passed(args.tol)
    print(f"max relative error {report.max_rel_error:.3e} over {report.checked_entries} entries: "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 3


def cmd_runs(args) -> int:
    if not args.registry:
        raise ConfigError("runs needs --registry")
    for r in list_runs(args.registry, args.kind):
        print(json.dumps(r, sort_keys=True))
    return 0


# --- parser ---

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vsum", description="Query-based video summarization with pseudo-label pretraining")
    p.add_argument("--registry", help="SQLAlchemy URL of the run registry, e.g. sqlite:///runs.db")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, train_overrides=True):
        sp.add_argument("--config", help="JSON config with optional train/eval sections")
        sp.add_argument("--seed", type=int)
        if train_overrides:
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--lr", type=float)
            sp.add_argument("--no-progress", action="store_true")

    def with_eval(sp):
        sp.add_argument("--budget", type=float)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--gt-mode", dest="gt_mode", choices=GT_MODES)

    sp = sub.add_parser("make-fixture", help="write a synthetic dataset bundle")
    sp.add_argument("--out", required=True)
    sp.add_argument("--preset", choices=sorted(DATASET_PRESETS))
    sp.add_argument("--videos", type=int, default=4)
    sp.add_argument("--frames", type=int, nargs=2, default=(12, 32), metavar=("MIN", "MAX"))
    sp.add_argument("--fps", type=int, default=2)
    sp.add_argument("--classes", type=int, default=5)
    sp.add_argument("--score-kind", default="integer_categories",
                    choices=("integer_categories", "continuous_unit_interval"))
    sp.add_argument("--feature-dim", type=int, default=16)
    sp.add_argument("--vocab-size", type=int, default=20)
    sp.add_argument("--annotators", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-queries", action="store_true")
    sp.set_defaults(func=cmd_make_fixture)

    sp = sub.add_parser("pseudo-labels", help="write segment pseudo labels as JSON")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    with_config(sp, train_overrides=False)
    sp.set_defaults(func=cmd_pseudo_labels)

    for name, func, helptext in (
        ("pretrain", cmd_pretrain, "pretrain on segment pseudo labels"),
        ("finetune", cmd_finetune, "fine-tune on frame labels"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--plot", action="store_true", help="also write loss.png")
        with_config(sp)
        if name == "finetune":
            sp.add_argument("--init", help="start from this (pretrain) checkpoint")
        sp.set_defaults(func=func)

    sp = sub.add_parser("evaluate", help="F-beta of a checkpoint on a split")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    sp.add_argument("--report")
    with_config(sp, train_overrides=False)
    with_eval(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("summarize", help="summary of one video for a query")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--video", required=True)
    sp.add_argument("--query")
    sp.add_argument("--out", help="write the mask JSON here instead of stdout")
    sp.add_argument("--csv", help="plot data: frame, expected score, selected")
    sp.add_argument("--plot", help="qualitative strip image")
    with_config(sp, train_overrides=False)
    with_eval(sp)
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("ablation", help="train and score the five component configurations")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    with_config(sp)
    with_eval(sp)
    sp.set_defaults(func=cmd_ablation)

    sp = sub.add_parser("grad-check", help="finite-difference check of the full model")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--video")
    sp.add_argument("--granularity", default="frame", choices=("frame", "segment"))
    sp.add_argument("--max-entries", type=int, default=20)
    sp.add_argument("--tol", type=float, default=1e-4)
    with_config(sp, train_overrides=False)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("runs", help="list runs in the registry")
    sp.add_argument("--kind")
    sp.set_defaults(func=cmd_runs)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except VsumError as e:
        logger.error("%s", e)
        return 2
    except Exception:
        logger.exception("%s failed", args.command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
