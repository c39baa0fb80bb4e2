import numpy as np
from estimators.gmm import GmmModel
from estimators.knn import KnnIndex, avg_topk_similarity
from schemas.enums import EstimatorKind
from services.classifier_service import EstimatorPair
from services.report_service import _grid_values


def test_knn_panels_show_one_minus_similarity(rng):
    free = rng.normal(size=(40, 2)) + [3.0, 0.0]
    obstacle = rng.normal(size=(40, 2)) + [0.0, 3.0]
    pair = EstimatorPair(EstimatorKind.KNN, KnnIndex(free, k=1), KnnIndex(obstacle, k=1))
    grid = np.vstack([free[:5], obstacle[:5], rng.normal(size=(10, 2))])
    values = _grid_values(pair, grid)
    assert np.allclose(values["free"][:5], 0.0, atol=1e-12)
    assert np.allclose(values["obstacle"][5:10], 0.0, atol=1e-12)
    assert np.allclose(values["free"], 1.0 - avg_topk_similarity(pair.free_model, grid), atol=1e-12)
    assert np.allclose(values["obstacle"], 1.0 - avg_topk_similarity(pair.obstacle_model, grid), atol=1e-12)
    assert np.all((values["free"] >= -1e-12) & (values["free"] <= 2.0 + 1e-12))


def test_knn_panels_are_undefined_at_the_origin(rng):
    pair = EstimatorPair(EstimatorKind.KNN, KnnIndex(rng.normal(size=(10, 2)), k=3), KnnIndex(rng.normal(size=(10, 2)), k=3))
    values = _grid_values(pair, np.array([[0.0, 0.0], [1.0, 1.0]]))
    for key in ("free", "obstacle", "ratio"):
        assert np.isnan(values[key][0]) and np.isfinite(values[key][1])


def test_gmm_panels_are_log_densities(rng):
    free = GmmModel(weights=[1.0], means=[[0.0, 0.0]], variances=[[1.0, 1.0]])
    obstacle = GmmModel(weights=[1.0], means=[[2.0, 0.0]], variances=[[1.0, 1.0]])
    grid = rng.normal(size=(15, 2))
    values = _grid_values(EstimatorPair(EstimatorKind.GMM, free, obstacle), grid)
    assert np.array_equal(values["free"], free.score(grid))
    assert np.allclose(values["ratio"], obstacle.score(grid) - free.score(grid), atol=1e-12)
