import math
import numpy as np
import pytest
from core.exceptions import DimMismatch, EmptyReferenceSet, KTooLarge, ZeroNormRow, ZeroQueryVector
from estimators.knn import KnnIndex, avg_topk_similarity, build_index, knn_ratio, ratio_from_similarities
from schemas.enums import ReferenceKind
from schemas.models import KnnDocument
from schemas.segment import ReferenceSet


def brute_force_similarity(rows: np.ndarray, k: int, query: np.ndarray) -> float:
    unit_rows = rows / np.linalg.norm(rows, axis=1)[:, None]
    q = query / np.linalg.norm(query)
    sims = list(q @ unit_rows.T)
    ranked = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
    return float(np.mean([sims[i] for i in ranked[:k]]))


def test_rows_are_unit_norm(rng):
    index = KnnIndex(rng.normal(size=(20, 5)) * 7.0, k=3)
    assert np.allclose(np.linalg.norm(index.rows, axis=1), 1.0)


def test_k_equal_to_size_is_valid():
    index = KnnIndex(np.array([[1.0, 0.0], [0.0, 1.0]]), k=2)
    assert avg_topk_similarity(index, np.array([1.0, 0.0])) == pytest.approx(0.5)


def test_k_larger_than_size():
    with pytest.raises(KTooLarge):
        KnnIndex(np.eye(3), k=4)


def test_empty_reference_set():
    with pytest.raises(EmptyReferenceSet):
        build_index(ReferenceSet.from_features(np.zeros((0, 3)), ReferenceKind.FREE), k=1)
    with pytest.raises(EmptyReferenceSet):
        KnnIndex(np.zeros((0, 3)), k=1)


def test_zero_norm_row():
    with pytest.raises(ZeroNormRow):
        KnnIndex(np.array([[1.0, 0.0], [0.0, 0.0]]), k=1)


def test_self_similarity_is_one(rng):
    rows = rng.normal(size=(10, 4))
    index = KnnIndex(rows, k=1)
    for row in rows:
        assert avg_topk_similarity(index, row) == pytest.approx(1.0)


def test_orthogonal_query_scores_zero():
    index = KnnIndex(np.array([[1.0, 0.0, 0.0]]), k=1)
    assert avg_topk_similarity(index, np.array([0.0, 2.0, -3.0])) == pytest.approx(0.0, abs=1e-15)


def test_matches_brute_force(rng):
    rows = rng.normal(size=(60, 6))
    for k in (1, 5, 60):
        index = KnnIndex(rows, k=k)
        queries = rng.normal(size=(25, 6))
        scores = avg_topk_similarity(index, queries)
        expected = [brute_force_similarity(rows, k, q) for q in queries]
        assert np.allclose(scores, expected, atol=1e-12)


def test_ties_are_broken_by_row_index():
    # three identical rows: any top-2 choice gives the same mean
    rows = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    index = KnnIndex(rows, k=2)
    assert avg_topk_similarity(index, np.array([1.0, 1.0])) == pytest.approx(math.sqrt(0.5))


def test_scale_invariance(rng):
    index = KnnIndex(rng.normal(size=(30, 3)), k=4)
    query = rng.normal(size=3)
    assert avg_topk_similarity(index, 10.0 * query) == pytest.approx(avg_topk_similarity(index, query), abs=1e-12)


def test_zero_query():
    index = KnnIndex(np.eye(2), k=1)
    with pytest.raises(ZeroQueryVector):
        avg_topk_similarity(index, np.zeros(2))


def test_query_dimension():
    index = KnnIndex(np.eye(3), k=1)
    with pytest.raises(DimMismatch):
        avg_topk_similarity(index, np.ones(2))


def test_ratio_of_similarities():
    obstacle = KnnIndex(np.array([[1.0, 0.0]]), k=1)
    free = KnnIndex(np.array([[1.0, 1.0]]), k=1)
    assert knn_ratio(obstacle, free, np.array([1.0, 0.0])) == pytest.approx(1.0 / math.sqrt(0.5))


def test_ratio_dimension_mismatch():
    with pytest.raises(DimMismatch):
        knn_ratio(KnnIndex(np.eye(2), k=1), KnnIndex(np.eye(3), k=1), np.ones(2))


@pytest.mark.parametrize(
    "obstacle, free, expected",
    [
        (0.5, 0.25, 2.0),
        (0.5, 0.0, math.inf),
        (0.5, -0.2, math.inf),
        (0.0, 0.0, 1.0),
        (-0.3, -0.1, 1.0),
        (-0.3, 0.6, -0.5),
    ],
)
def test_ratio_sentinels(obstacle, free, expected):
    assert float(ratio_from_similarities(obstacle, free)) == pytest.approx(expected)


def test_ratio_from_orthogonal_free_index():
    obstacle = KnnIndex(np.array([[1.0, 0.0]]), k=1)
    free = KnnIndex(np.array([[0.0, 1.0]]), k=1)
    assert knn_ratio(obstacle, free, np.array([1.0, 0.0])) == math.inf


def test_document_round_trip_is_exact(rng):
    index = KnnIndex(rng.normal(size=(15, 4)), k=3)
    text = index.to_document().model_dump_json()
    restored = KnnIndex.from_document(KnnDocument.model_validate_json(text))
    assert np.array_equal(restored.rows, index.rows)
    assert restored.to_document().model_dump_json() == text
