import itertools
import json
import struct

import numpy as np
import numpy.testing as npt
import pytest

from dataset_io import (
    AnnotationSet,
    FeatureTensor,
    load_dataset,
    load_vocab,
    parse_manifest,
    repeat_index_map,
    frame_repeat,
    split_dataset,
    tokenize_query,
)
from errors import (
    DatasetError,
    DuplicateVideoError,
    ManifestError,
    MissingFileError,
    ScoreDomainError,
    ShapeMismatchError,
)


def _read_f32_rows(path, cols):
    """Byte-level reader independent of numpy's file helpers."""
    raw = path.read_bytes()
    n = len(raw) // 4
    vals = struct.unpack("<%df" % n, raw)
    return [vals[i:i + cols] for i in range(0, n, cols)]


def _edit_manifest(bundle, fn):
    data = json.loads(bundle.read_text())
    fn(data)
    bundle.write_text(json.dumps(data))


def test_load_matches_raw_bytes(bundle):
    ds = load_dataset(bundle)
    raw = json.loads(bundle.read_text())
    assert len(ds) == len(raw["videos"])
    d = raw["feature_dim"]
    for v in raw["videos"]:
        rec = ds[v["video_id"]]
        rows = _read_f32_rows(bundle.parent / v["files"]["frame_features"], d)
        assert len(rows) == v["frame_count"] == len(rec.frame_features)
        npt.assert_array_equal(rec.frame_features.values, np.array(rows, dtype=np.float32))
        seg_rows = _read_f32_rows(bundle.parent / v["files"]["segment_features"], d)
        assert len(seg_rows) == v["segment_count"] == len(rec.segment_features)
        ann = json.loads((bundle.parent / v["files"]["annotations"]).read_text())["annotators"]
        assert rec.annotations.annotator_count == len(ann)
        assert rec.annotations.frame_count == v["frame_count"]


def test_loaded_arrays_are_read_only(dataset):
    rec = dataset[dataset.video_ids[0]]
    with pytest.raises(ValueError):
        rec.frame_features.values[0, 0] = 1.0


def test_unknown_video_id(dataset):
    with pytest.raises(DatasetError, match="nope"):
        dataset["nope"]


def test_short_feature_file_names_video(bundle):
    raw = json.loads(bundle.read_text())
    v = raw["videos"][1]
    path = bundle.parent / v["files"]["frame_features"]
    path.write_bytes(path.read_bytes()[:-4 * raw["feature_dim"]])
    with pytest.raises(ShapeMismatchError) as exc:
        load_dataset(bundle)
    assert exc.value.video_id == v["video_id"]
    assert exc.value.field == "frame_features"
    assert v["video_id"] in str(exc.value)


def test_missing_feature_file(bundle):
    raw = json.loads(bundle.read_text())
    (bundle.parent / raw["videos"][0]["files"]["segment_features"]).unlink()
    with pytest.raises(MissingFileError) as exc:
        load_dataset(bundle)
    assert exc.value.field == "segment_features"


def test_duplicate_video_id(bundle):
    _edit_manifest(bundle, lambda d: d["videos"].append(dict(d["videos"][0])))
    with pytest.raises(DuplicateVideoError):
        parse_manifest(bundle)


def test_frame_count_above_max_frames(bundle):
    def grow(d):
        d["videos"][0]["frame_count"] = d["max_frames"] + 1
    _edit_manifest(bundle, grow)
    with pytest.raises(ManifestError, match="max_frames"):
        parse_manifest(bundle)


def test_token_outside_vocabulary(bundle):
    def bad_tokens(d):
        d["videos"][0]["query_tokens"] = [d["vocab_size"]]
    _edit_manifest(bundle, bad_tokens)
    with pytest.raises(ManifestError) as exc:
        parse_manifest(bundle)
    assert exc.value.field == "query_tokens"


def test_score_out_of_domain(bundle):
    raw = json.loads(bundle.read_text())
    v = raw["videos"][2]
    p = bundle.parent / v["files"]["annotations"]
    ann = json.loads(p.read_text())
    ann["annotators"][0][0] = 6
    p.write_text(json.dumps(ann))
    with pytest.raises(ScoreDomainError) as exc:
        load_dataset(bundle)
    assert exc.value.video_id == v["video_id"]


def test_non_integer_category_rejected(bundle):
    raw = json.loads(bundle.read_text())
    p = bundle.parent / raw["videos"][0]["files"]["annotations"]
    ann = json.loads(p.read_text())
    ann["annotators"][0][0] = 2.5
    p.write_text(json.dumps(ann))
    with pytest.raises(ScoreDomainError):
        load_dataset(bundle)


def test_annotation_length_mismatch(bundle):
    raw = json.loads(bundle.read_text())
    p = bundle.parent / raw["videos"][0]["files"]["annotations"]
    ann = json.loads(p.read_text())
    ann["annotators"][1] = ann["annotators"][1][:-1]
    p.write_text(json.dumps(ann))
    with pytest.raises(ShapeMismatchError):
        load_dataset(bundle)


def _uniform_maps(n, m):
    """Every non-decreasing map whose repeat counts differ by at most one and
    give the extra copies to the earliest frames."""
    found = []
    for counts in itertools.product(range(1, m + 1), repeat=n):
        if sum(counts) != m or max(counts) - min(counts) > 1:
            continue
        if list(counts) != sorted(counts, reverse=True):
            continue
        found.append(np.repeat(np.arange(n), counts))
    return found


def test_repeat_three_frames_to_seven():
    index_map = repeat_index_map(3, 7)
    assert np.bincount(index_map).tolist() == [3, 2, 2]
    oracle = _uniform_maps(3, 7)
    assert len(oracle) == 1
    npt.assert_array_equal(index_map, oracle[0])


@pytest.mark.parametrize("n, m", [(1, 1), (1, 5), (2, 5), (4, 4), (4, 9), (5, 7)])
def test_repeat_matches_brute_force(n, m):
    (oracle,) = _uniform_maps(n, m)
    npt.assert_array_equal(repeat_index_map(n, m), oracle)


def test_frame_repeat_copies_features_and_scores():
    feats = FeatureTensor(values=np.arange(6, dtype=np.float32).reshape(3, 2), granularity="frame")
    scores = AnnotationSet(scores=np.array([[1.0, 2.0, 3.0], [2.0, 2.0, 5.0]]))
    f, s, index_map = frame_repeat(feats, scores, 7)
    assert f.shape == (7, 2)
    assert s.scores.shape == (2, 7)
    # temporal order is preserved
    assert np.all(np.diff(index_map) >= 0)
    npt.assert_array_equal(f.values, feats.values[index_map])
    npt.assert_array_equal(s.scores[1], [2, 2, 2, 2, 2, 5, 5])


def test_frame_repeat_identity_at_target_length():
    feats = FeatureTensor(values=np.ones((4, 2), dtype=np.float32), granularity="frame")
    scores = AnnotationSet(scores=np.ones((1, 4)))
    f, s, index_map = frame_repeat(feats, scores, 4)
    assert f is feats and s is scores
    npt.assert_array_equal(index_map, np.arange(4))


def test_frame_repeat_rejects_longer_than_target():
    feats = FeatureTensor(values=np.ones((5, 2), dtype=np.float32), granularity="frame")
    with pytest.raises(DatasetError):
        frame_repeat(feats, AnnotationSet(scores=np.ones((1, 5))), 4)


def test_split_is_seeded_and_disjoint():
    ids = [f"v{i}" for i in range(10)]
    a = split_dataset(ids, (6, 2, 2), seed=3)
    b = split_dataset(list(reversed(ids)), (6, 2, 2), seed=3)
    assert a == b
    train, val, test = a
    assert (len(train), len(val), len(test)) == (6, 2, 2)
    assert set(train) | set(val) | set(test) == set(ids)
    assert not (set(train) & set(val) or set(train) & set(test) or set(val) & set(test))
    assert split_dataset(ids, (6, 2, 2), seed=4) != a


def test_split_counts_must_sum():
    with pytest.raises(DatasetError):
        split_dataset(["a", "b", "c"], (2, 2, 0), seed=0)


def test_tokenize_query(bundle):
    vocab = load_vocab(bundle.parent / "vocab.json")
    assert tokenize_query("Word3, WORD1 and zebra", vocab) == [3, 1, 0, 0]
    assert tokenize_query("", vocab) == []


@pytest.mark.parametrize("total, counts", [(50, (40, 5, 5)), (25, (19, 3, 3)), (190, (114, 38, 38))])
def test_published_split_sizes(total, counts):
    ids = [f"video_{i:03d}" for i in range(total)]
    for seed in range(20):
        train, val, test = split_dataset(ids, counts, seed)
        assert (len(train), len(val), len(test)) == counts
        assert sorted(train + val + test) == ids


def test_random_splits_partition_the_ids():
    rng = np.random.default_rng(42)
    for _ in range(200):
        total = int(rng.integers(1, 60))
        cuts = np.sort(rng.integers(0, total + 1, size=2))
        counts = (int(cuts[0]), int(cuts[1] - cuts[0]), int(total - cuts[1]))
        ids = [f"v{i}" for i in rng.permutation(total)]
        seed = int(rng.integers(1000))
        parts = split_dataset(ids, counts, seed)
        assert tuple(len(p) for p in parts) == counts
        assert sorted(sum(parts, [])) == sorted(ids)
        assert parts == split_dataset(list(reversed(ids)), counts, seed)
