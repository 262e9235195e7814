import csv
import json
import math
from fractions import Fraction

import numpy as np
import numpy.testing as npt
import pytest

from checkpoint import file_sha256
from config import EvalConfig
from errors import EvaluationError
from evaluation import (
    SummarySelection,
    budget_size,
    collapse_repeated,
    evaluate,
    evaluate_checkpoint,
    expected_score,
    f_beta,
    ground_truth_masks,
    select_summary,
    write_plot_csv,
)
from training_pipeline import finetune

from conftest import tiny_config


def _rank_order(values):
    return sorted(range(len(values)), key=lambda i: (-values[i], i))


def _top_set(values, budget):
    k = min(len(values), math.ceil(Fraction(str(budget)) * len(values)))
    return set(_rank_order(list(values))[:k])


def _f_sets(pred, gt, beta=1.0):
    overlap = len(pred & gt)
    if overlap == 0:
        return 0.0
    p, r = overlap / len(pred), overlap / len(gt)
    return (1 + beta ** 2) * p * r / (beta ** 2 * p + r)


class RankScorer:
    """Puts the highest expected score on frames the annotators rate highest.

    Expected scores are spread over distinct levels so averaging repeated
    copies cannot reorder them."""

    def __init__(self, dataset):
        self.dataset = dataset

    def predict_proba(self, batch):
        C = self.dataset.manifest.num_classes
        mean = self.dataset[batch.video_id].annotations.scores.mean(axis=0)
        n = mean.shape[0]
        level = np.empty(n)
        for rank, i in enumerate(_rank_order(list(mean))):
            level[i] = (n - rank) / (n + 1)
        top = level[batch.index_map]
        probs = np.zeros((len(top), C))
        probs[:, C - 1] = top
        probs[:, 0] = 1.0 - top
        return probs


def test_expected_score_cases(rng):
    npt.assert_array_equal(expected_score(np.eye(5)[[4]]), [5.0])
    npt.assert_allclose(expected_score(np.full((2, 5), 0.2)), [3.0, 3.0], rtol=1e-15)
    p = rng.dirichlet(np.ones(4), size=6)
    oracle = [sum((c + 1) * row[c] for c in range(4)) for row in p]
    npt.assert_allclose(expected_score(p), oracle, rtol=1e-14)


@pytest.mark.parametrize("bad", [np.full((2, 3), 0.5), np.array([[1.2, -0.2]]), np.ones(3) / 3])
def test_expected_score_rejects_non_distributions(bad):
    with pytest.raises(EvaluationError):
        expected_score(bad)


def test_budget_size():
    assert budget_size(0.15, 20) == 3
    assert budget_size(0.15, 10) == 2
    assert budget_size(1.0, 7) == 7
    assert budget_size(0.01, 3) == 1
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(EvaluationError):
            budget_size(bad, 10)


def test_uniform_scores_pick_earliest_frames():
    sel = select_summary(np.full(10, 3.0), 0.15)
    assert sel.selected.tolist() == [0, 1]


def test_decreasing_scores_pick_prefix():
    sel = select_summary(np.linspace(5, 1, 40), 0.15)
    assert sel.selected.tolist() == list(range(6))


def test_selection_matches_sort_oracle():
    rng = np.random.default_rng(21)
    for _ in range(200):
        n = int(rng.integers(1, 60))
        budget = float(rng.choice([0.05, 0.15, 0.3, 0.5, 1.0]))
        s = rng.integers(1, 6, size=n).astype(float)  # plenty of ties
        assert set(select_summary(s, budget).selected.tolist()) == _top_set(s, budget)


def test_selection_is_rank_invariant(rng):
    s = rng.normal(size=30)
    base = select_summary(s, 0.2).mask
    npt.assert_array_equal(select_summary(3 * s + 1, 0.2).mask, base)
    npt.assert_array_equal(select_summary(np.exp(s), 0.2).mask, base)


def test_collapse_repeated_averages_copies():
    index_map = np.array([0, 0, 1, 2, 2, 2])
    npt.assert_allclose(collapse_repeated(np.array([1.0, 3, 5, 2, 4, 6]), index_map, 3), [2.0, 5.0, 4.0])
    with pytest.raises(EvaluationError):
        collapse_repeated(np.ones(3), np.array([0, 0, 2]), 3)


def test_select_summary_through_index_map():
    sel = select_summary(np.array([1.0, 1.0, 5.0, 4.0, 4.0, 4.0]), 0.4, np.array([0, 0, 1, 2, 2, 2]), 3)
    assert sel.scores.shape == (3,)
    assert sel.selected.tolist() == [1, 2]


def test_f_beta_hand_case():
    pred = np.array([1, 1, 0, 0], dtype=bool)
    gt = np.array([1, 0, 0, 0], dtype=bool)
    assert f_beta(pred, [gt]) == pytest.approx(2 / 3)
    assert f_beta(pred, [pred]) == 1.0
    assert f_beta(pred, [~pred]) == 0.0
    assert f_beta(pred, [gt, pred]) == pytest.approx((2 / 3 + 1) / 2)


def test_f_beta_weights_recall():
    pred = np.array([1, 1, 1, 1, 0, 0], dtype=bool)
    gt = np.array([1, 0, 0, 0, 0, 0], dtype=bool)
    # p = 1/4, r = 1
    assert f_beta(pred, [gt], beta=2.0) == pytest.approx(5 * 0.25 / (4 * 0.25 + 1))


def test_f_beta_matches_set_oracle():
    rng = np.random.default_rng(22)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        pred = rng.random(n) < 0.3
        gts = [rng.random(n) < 0.3 for _ in range(int(rng.integers(1, 5)))]
        p_set = set(np.flatnonzero(pred).tolist())
        oracle = np.mean([_f_sets(p_set, set(np.flatnonzero(g).tolist())) if p_set else 0.0 for g in gts])
        got = f_beta(pred, gts)
        assert got == pytest.approx(oracle, abs=1e-12)
        assert 0.0 <= got <= 1.0
        if len(gts) == 1:
            assert f_beta(gts[0], [pred]) == pytest.approx(got, abs=1e-12)


def test_f_beta_rejects_bad_input():
    m = np.ones(4, dtype=bool)
    with pytest.raises(EvaluationError):
        f_beta(m, [])
    with pytest.raises(EvaluationError):
        f_beta(m, [np.ones(5, dtype=bool)])
    with pytest.raises(EvaluationError):
        f_beta(m, [m], beta=0.0)


def test_ground_truth_modes():
    scores = np.array([[5, 1, 1, 1, 1, 1, 1], [1, 5, 1, 1, 1, 1, 1], [1, 5, 2, 1, 1, 1, 1]], dtype=float)
    per = ground_truth_masks(scores, 0.15)
    assert [np.flatnonzero(m).tolist() for m in per] == [[0, 1], [0, 1], [1, 2]]
    (consensus,) = ground_truth_masks(scores, 0.15, "consensus")
    assert np.flatnonzero(consensus).tolist() == [0, 1]
    with pytest.raises(EvaluationError):
        ground_truth_masks(scores, 0.15, "majority")


@pytest.mark.parametrize("gt_mode", ["per_annotator", "consensus"])
def test_evaluate_matches_standalone_scorer(dataset, gt_mode):
    ids = dataset.video_ids
    report = evaluate(RankScorer(dataset), dataset, ids, EvalConfig(gt_mode=gt_mode), tiny_config())
    for vid in ids:
        scores = dataset[vid].annotations.scores
        pred = _top_set(list(scores.mean(axis=0)), 0.15)
        rows = [scores.mean(axis=0)] if gt_mode == "consensus" else list(scores)
        oracle = np.mean([_f_sets(pred, _top_set(list(r), 0.15)) for r in rows])
        assert report.per_video[vid] == pytest.approx(oracle, abs=1e-12)
    assert report.mean_f_beta == pytest.approx(np.mean(list(report.per_video.values())))
    assert report.split == list(ids)


def test_evaluate_rejects_empty_split(model, dataset):
    with pytest.raises(EvaluationError):
        evaluate(model, dataset, [])


def test_report_json_is_deterministic(model, dataset, config):
    a = evaluate(model, dataset, dataset.video_ids, train_config=config)
    b = evaluate(model, dataset, dataset.video_ids, train_config=config)
    assert a.to_json() == b.to_json()
    loaded = json.loads(a.to_json())
    assert set(loaded) >= {"per_video", "mean_f_beta", "beta", "budget", "gt_mode", "config_hash"}


def test_evaluate_checkpoint(tmp_path, model, dataset, config):
    finetune(model, dataset, dataset.video_ids[:2], [], config, tmp_path)
    ckpt = tmp_path / "finetune.ckpt"
    from_file = evaluate_checkpoint(ckpt, dataset, dataset.video_ids[2:], train_config=config)
    in_memory = evaluate(model, dataset, dataset.video_ids[2:], train_config=config)
    assert from_file.per_video == in_memory.per_video
    assert from_file.checkpoint_hash == file_sha256(ckpt)


def test_write_plot_csv(tmp_path):
    sel = SummarySelection(mask=np.array([True, False, True]), budget=0.5, scores=np.array([4.5, 1.0, 3.25]))
    path = write_plot_csv(tmp_path / "plot.csv", sel)
    with path.open(newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["frame", "expected_score", "selected"]
    assert rows[1:] == [["0", "4.5", "1"], ["1", "1", "0"], ["2", "3.25", "1"]]


def test_f_beta_overlapping_triples():
    pred = np.zeros(6, dtype=bool)
    gt = np.zeros(6, dtype=bool)
    pred[[1, 2, 3]] = True
    gt[[2, 3, 4]] = True
    assert f_beta(pred, [gt]) == pytest.approx(2 / 3, abs=1e-15)


def test_adding_a_ground_truth_frame_never_hurts():
    rng = np.random.default_rng(23)
    for _ in range(200):
        n = int(rng.integers(2, 30))
        gt = rng.random(n) < 0.4
        pred = rng.random(n) < 0.3
        missing = np.flatnonzero(gt & ~pred)
        if missing.size == 0:
            continue
        grown = pred.copy()
        grown[rng.choice(missing)] = True
        assert f_beta(grown, [gt]) >= f_beta(pred, [gt])
