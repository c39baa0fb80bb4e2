from typing import Union
import logging
import numpy as np
from core.exceptions import KTooLarge, EmptyReferenceSet, DimMismatch, ZeroNormRow
from estimators.base import DensityModel
from schemas.enums import EstimatorKind
from schemas.models import KnnDocument
from schemas.segment import ReferenceSet

logger = logging.getLogger(__name__)

_QUERY_CHUNK = 1024


class KnnIndex(DensityModel):
    """Exact cosine-similarity index over L2-normalized reference rows."""

    kind = EstimatorKind.KNN

    def __init__(self, rows: np.ndarray, k: int, prenormalized: bool = False):
        rows = np.array(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise EmptyReferenceSet(f"k-NN index needs a non-empty N x C matrix, got shape {rows.shape}")
        if rows.shape[1] == 0:
            raise DimMismatch("k-NN rows have zero length")
        if k > rows.shape[0]:
            raise KTooLarge(f"k={k} exceeds the {rows.shape[0]} reference rows")
        norms = np.linalg.norm(rows, axis=1)
        if np.any(norms == 0):
            raise ZeroNormRow("k-NN reference rows must have non-zero norm")
        # rows read back from a model file are already unit-norm; keep them bit-exact
        self.rows = rows if prenormalized else rows / norms[:, None]
        self.rows.setflags(write=False)
        self.k = int(k)

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    @property
    def size(self) -> int:
        return int(self.rows.shape[0])

    @property
    def normalized(self) -> bool:
        return True

    def score_batch(self, features: np.ndarray) -> np.ndarray:
        scores = np.empty(features.shape[0], dtype=np.float64)
        for start in range(0, features.shape[0], _QUERY_CHUNK):
            sims = features[start:start + _QUERY_CHUNK] @ self.rows.T
            # stable sort of negated similarities: ties go to the lower row index
            top = np.argsort(-sims, axis=1, kind="stable")[:, :self.k]
            scores[start:start + _QUERY_CHUNK] = np.mean(np.take_along_axis(sims, top, axis=1), axis=1)
        return scores

    def to_document(self) -> KnnDocument:
        return KnnDocument(dim=self.dim, k=self.k, rows=self.rows.tolist())

    @classmethod
    def from_document(cls, document: KnnDocument) -> "KnnIndex":
        index = cls(document.rows, document.k, prenormalized=True)
        if index.dim != document.dim:
            raise DimMismatch(f"k-NN document declares C={document.dim}, rows have C={index.dim}")
        return index


def build_index(refset: ReferenceSet, k: int) -> KnnIndex:
    """
    Raises:
        EmptyReferenceSet: no rows
        KTooLarge: k > N
    """
    if refset.size == 0:
        raise EmptyReferenceSet(f"{refset.kind.value} reference set has no rows")
    index = KnnIndex(refset.features, k)
    logger.info(f"Built {refset.kind.value} k-NN index: N={index.size}, C={index.dim}, k={k}")
    return index


def avg_topk_similarity(index: KnnIndex, t) -> Union[float, np.ndarray]:
    """Mean of the k largest cosine similarities between t and the index rows."""
    return index.score(t)


def ratio_from_similarities(obstacle_sim, free_sim) -> np.ndarray:
    """
    obstacle / free average similarity.

    A non-positive denominator gives +inf when the numerator is positive and
    the tie value 1 when both are non-positive.
    """
    obstacle_sim = np.asarray(obstacle_sim, dtype=np.float64)
    free_sim = np.asarray(free_sim, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = obstacle_sim / free_sim
    ratio = np.where(free_sim > 0, ratio, np.where(obstacle_sim > 0, np.inf, 1.0))
    return ratio


def knn_ratio(index_obstacle: KnnIndex, index_free: KnnIndex, t) -> Union[float, np.ndarray]:
    """
    Raises:
        DimMismatch: the indexes or the query disagree on C
        ZeroQueryVector: ||t|| == 0
    """
    if index_obstacle.dim != index_free.dim:
        raise DimMismatch(f"Obstacle index is {index_obstacle.dim}-d, free index is {index_free.dim}-d")
    ratio = ratio_from_similarities(avg_topk_similarity(index_obstacle, t), avg_topk_similarity(index_free, t))
    return float(ratio) if np.ndim(t) == 1 else ratio
