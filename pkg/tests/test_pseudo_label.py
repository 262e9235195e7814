import json
import math
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import numpy.testing as npt
import pytest

from dataset_io import AnnotationSet
from errors import DatasetError, ScoreDomainError
from pseudo_label import (
    aggregate_annotators,
    dataset_pseudo_labels,
    expected_segment_count,
    generate_pseudo_labels,
    score_to_class,
    segment_boundaries,
    segment_index,
    write_pseudo_labels,
)


def _brute_labels(scores, fps, C, kind):
    """Walks the frames one by one, closing a window every 2*fps frames."""
    bounds, means, classes = [], [], []
    start = 0
    for i in range(1, len(scores) + 1):
        if i - start == 2 * fps or i == len(scores):
            window = scores[start:i]
            m = math.fsum(window) / len(window)
            if kind == "integer_categories":
                c = int(Decimal(repr(m)).quantize(Decimal(1), rounding=ROUND_HALF_UP))
            else:
                c = next(k for k in range(1, C + 1) if m < k / C) if m < 1.0 else C
            bounds.append((start, i))
            means.append(m)
            classes.append(min(max(c, 1), C))
            start = i
    return bounds, means, classes


def test_boundaries_example():
    assert segment_boundaries(7, 1) == ((0, 2), (2, 4), (4, 6), (6, 7))


def test_single_segment_when_short():
    assert segment_boundaries(3, 5) == ((0, 3),)
    assert expected_segment_count(3, 5) == 1
    assert expected_segment_count(21, 5) == 3


@pytest.mark.parametrize("args", [(0, 1), (5, 0)])
def test_boundaries_reject_non_positive(args):
    with pytest.raises(DatasetError):
        segment_boundaries(*args)


def test_integer_mean_rounds_half_away_from_zero():
    labels = generate_pseudo_labels([1, 2, 3, 4], fps=2, num_classes=5, score_kind="integer_categories")
    assert labels.boundaries == ((0, 4),)
    assert labels.mean_scores.tolist() == [2.5]
    assert labels.class_ids.tolist() == [3]


def test_continuous_bins():
    labels = generate_pseudo_labels([0.0, 1.0], fps=1, num_classes=5, score_kind="continuous_unit_interval")
    assert labels.mean_scores.tolist() == [0.5]
    assert labels.class_ids.tolist() == [3]
    npt.assert_array_equal(score_to_class([0.0, 0.2, 0.999, 1.0], 5, "continuous_unit_interval"), [1, 2, 5, 5])


def test_rounding_edges():
    npt.assert_array_equal(score_to_class([1.0, 1.5, 2.49, 3.5, 4.5, 5.0], 5, "integer_categories"),
                           [1, 2, 2, 4, 5, 5])


@pytest.mark.parametrize("kind", ["integer_categories", "continuous_unit_interval"])
def test_matches_brute_force(kind):
    rng = np.random.default_rng(5)
    for _ in range(500):
        n = int(rng.integers(1, 201))
        fps = int(rng.integers(1, 31))
        if kind == "integer_categories":
            scores = rng.integers(1, 6, size=n).astype(float)
        else:
            scores = rng.random(n)
        got = generate_pseudo_labels(scores, fps, 5, kind)
        bounds, means, classes = _brute_labels(scores.tolist(), fps, 5, kind)
        assert list(got.boundaries) == bounds
        npt.assert_allclose(got.mean_scores, means, rtol=0, atol=1e-12)
        assert got.class_ids.tolist() == classes


def test_pooling_hook():
    scores = [1, 1, 5, 1]
    assert generate_pseudo_labels(scores, 2, 5, "integer_categories", pooling="max").class_ids.tolist() == [5]
    assert generate_pseudo_labels(scores, 2, 5, "integer_categories", pooling="median").class_ids.tolist() == [1]
    with pytest.raises(DatasetError):
        generate_pseudo_labels(scores, 2, 5, "integer_categories", pooling="sum")


def test_scores_outside_domain():
    with pytest.raises(ScoreDomainError):
        generate_pseudo_labels([0.5, 2.0], 1, 5, "integer_categories")
    with pytest.raises(ScoreDomainError):
        generate_pseudo_labels([0.5, 1.2], 1, 5, "continuous_unit_interval")
    with pytest.raises(DatasetError):
        generate_pseudo_labels([], 1, 5, "integer_categories")


def test_aggregate_twenty_annotators():
    rng = np.random.default_rng(11)
    rows = rng.integers(1, 6, size=(20, 37)).astype(float)
    oracle = [math.fsum(col) / 20 for col in zip(*rows.tolist())]
    npt.assert_allclose(aggregate_annotators(AnnotationSet(scores=rows)), oracle, rtol=0, atol=1e-12)
    npt.assert_allclose(aggregate_annotators(rows.tolist()), oracle, rtol=0, atol=1e-12)


def test_aggregate_rejects_ragged_and_empty():
    with pytest.raises(DatasetError):
        aggregate_annotators([[1, 2], [1]])
    with pytest.raises(DatasetError):
        aggregate_annotators([])


def test_segment_index_covers_frames():
    bounds = segment_boundaries(7, 1)
    npt.assert_array_equal(segment_index(bounds, 7), [0, 0, 1, 1, 2, 2, 3])
    with pytest.raises(DatasetError):
        segment_index(bounds, 9)


def test_dataset_labels_match_segment_features(dataset, tmp_path):
    labels = dataset_pseudo_labels(dataset)
    assert set(labels) == set(dataset.video_ids)
    for vid, lab in labels.items():
        assert len(lab) == dataset[vid].meta.segment_count
    written = write_pseudo_labels(labels, tmp_path)
    assert len(written) == len(labels)
    payload = json.loads(written[0].read_text())
    first = payload["segments"][0]
    assert set(first) == {"start", "end", "mean", "class"}
    assert first["start"] == 0


@pytest.mark.parametrize("kind", ["integer_categories", "continuous_unit_interval"])
def test_segment_mean_properties(kind):
    rng = np.random.default_rng(41)

    def draw(n):
        return rng.integers(1, 6, size=n).astype(float) if kind == "integer_categories" else rng.random(n)

    for _ in range(300):
        n, fps = int(rng.integers(1, 80)), int(rng.integers(1, 8))
        scores = draw(n)
        labels = generate_pseudo_labels(scores, fps, 5, kind)
        for (a, b), m in zip(labels.boundaries, labels.mean_scores):
            assert scores[a:b].min() - 1e-12 <= m <= scores[a:b].max() + 1e-12

        # shuffling frames inside each segment changes nothing
        shuffled = scores.copy()
        for a, b in labels.boundaries:
            shuffled[a:b] = rng.permutation(shuffled[a:b])
        again = generate_pseudo_labels(shuffled, fps, 5, kind)
        npt.assert_allclose(again.mean_scores, labels.mean_scores, rtol=0, atol=1e-12)
        npt.assert_array_equal(again.class_ids, labels.class_ids)

        # raising one frame never lowers its segment's mean or class
        i = int(rng.integers(n))
        raised = scores.copy()
        raised[i] = 5.0 if kind == "integer_categories" else 1.0
        k = int(segment_index(labels.boundaries, n)[i])
        up = generate_pseudo_labels(raised, fps, 5, kind)
        assert up.mean_scores[k] >= labels.mean_scores[k] - 1e-12
        assert up.class_ids[k] >= labels.class_ids[k]
        others = np.arange(len(labels)) != k
        npt.assert_array_equal(up.class_ids[others], labels.class_ids[others])
