import numpy as np
import pytest
from schemas.config import EstimatorConfig, FlowConfig, GmmConfig, KnnConfig
from schemas.enums import ReferenceKind
from schemas.segment import ReferenceSet


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def blob_features(rng):
    """Two unit-variance 2-d blobs ten standard deviations apart."""
    free = rng.normal(size=(300, 2)) + np.array([20.0, 0.0])
    obstacle = rng.normal(size=(300, 2)) + np.array([20.0, 10.0])
    return free, obstacle


@pytest.fixture
def blob_refsets(blob_features):
    free, obstacle = blob_features
    return (
        ReferenceSet.from_features(free, ReferenceKind.FREE),
        ReferenceSet.from_features(obstacle, ReferenceKind.OBSTACLE),
    )


@pytest.fixture
def small_config():
    """Hyperparameters small enough for fast fits."""
    return EstimatorConfig(
        seed=0,
        gmm=GmmConfig(components=2),
        flow=FlowConfig(blocks=2, hidden_width=16, hidden_layers=2, epochs=20, batch_size=64, step_size=5e-3),
        knn=KnnConfig(k=5),
    )
