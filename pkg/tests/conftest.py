import numpy as np
import pytest

from spl_advise.training import (
    DatasetConfig,
    EmbeddingConfig,
    PaceConfig,
    StudentConfig,
    TrainConfig,
    build_dataset,
)


def tiny_config(**kwargs) -> TrainConfig:
    """Small, fast experiment config used across the suite."""
    base = dict(
        name="tiny",
        dataset=DatasetConfig(
            classes=4,
            subclusters=2,
            samples_per_subcluster=25,
            dim=6,
            center_spread=12.0,
            cluster_std=1.0,
            seed=777,
        ),
        embedding=EmbeddingConfig(
            hidden=(16,),
            embedding_dim=4,
            clusters_per_class=2,
            batch_clusters=4,
            batch_examples=4,
            iterations=40,
            refresh_interval=20,
            lr=3e-3,
        ),
        student=StudentConfig(
            hidden=(16,),
            batch_size=32,
            outer_iterations=6,
            epochs_per_iteration=1,
        ),
        pace=PaceConfig(),
    )
    base.update(kwargs)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset():
    config = tiny_config()
    return build_dataset(config.dataset)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
