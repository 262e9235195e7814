import logging

import numpy as np
import pytest

from config import TrainConfig
from dataset_io import load_dataset
from synthetic import write_synthetic_bundle
from training_pipeline import build_model, prepare_batch


def tiny_config(**overrides) -> TrainConfig:
    base = dict(
        epochs=3,
        lr=1e-2,
        embed_dim=4,
        max_query_len=8,
        ffn_multiplier=2,
        progress=False,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.WARNING)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bundle(tmp_path):
    return write_synthetic_bundle(
        tmp_path / "bundle",
        num_videos=4,
        frame_range=(8, 14),
        fps=2,
        feature_dim=8,
        vocab_size=12,
        annotators=3,
        seed=7,
    )


@pytest.fixture
def dataset(bundle):
    return load_dataset(bundle)


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def model(dataset, config):
    return build_model(dataset, config)


@pytest.fixture
def batch(dataset, config):
    return prepare_batch(dataset, dataset.video_ids[0], config)
