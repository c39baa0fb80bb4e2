from abc import ABC, abstractmethod
from pathlib import Path
from typing import ClassVar, Union
import logging
import numpy as np
from core.exceptions import DimMismatch, DataError, ZeroQueryVector
from schemas.enums import EstimatorKind

logger = logging.getLogger(__name__)


class DensityModel(ABC):
    """A fitted estimator for one reference distribution.

    ``score`` is comparable between two models of the same kind: a
    log-density for gmm and flow, an average top-k cosine similarity for knn.
    """

    kind: ClassVar[EstimatorKind]

    @property
    @abstractmethod
    def dim(self) -> int:
        ...

    @property
    def normalized(self) -> bool:
        """Whether queries are L2-normalized before scoring."""
        return False

    @abstractmethod
    def score_batch(self, features: np.ndarray) -> np.ndarray:
        """Score an N x C matrix of already prepared queries."""
        ...

    @abstractmethod
    def to_document(self):
        ...

    def prepare(self, features) -> np.ndarray:
        """Validate queries against the model and apply its ingest normalization."""
        queries = np.asarray(features, dtype=np.float64)
        if queries.ndim == 1:
            queries = queries[None, :]
        if queries.ndim != 2 or queries.shape[1] != self.dim:
            raise DimMismatch(f"{self.kind.value} model expects {self.dim}-d features, got shape {np.shape(features)}")
        if not np.all(np.isfinite(queries)):
            raise DataError("Query features contain non-finite values")
        if self.normalized:
            norms = np.linalg.norm(queries, axis=1)
            if np.any(norms == 0):
                raise ZeroQueryVector("Cannot score a zero-norm query vector")
            queries = queries / norms[:, None]
        return queries

    def score(self, features) -> Union[float, np.ndarray]:
        """Score one C-vector (returns a float) or an N x C matrix (returns N scores)."""
        single = np.ndim(features) == 1
        scores = self.score_batch(self.prepare(features))
        return float(scores[0]) if single else scores

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_document().model_dump_json())
        except OSError as e:
            logger.error(f"Failed to write {self.kind.value} model to {path}: {str(e)}")
            raise
        logger.info(f"Saved {self.kind.value} model ({self.dim}-d) to {path}")
