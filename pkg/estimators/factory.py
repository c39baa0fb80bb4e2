from pathlib import Path
from typing import Union
import logging
from pydantic import ValidationError
from core.exceptions import ModelLoadError
from estimators.base import DensityModel
from estimators.flow import FlowModel, train_flow
from estimators.gmm import GmmModel, em_fit
from estimators.knn import KnnIndex, build_index
from schemas.config import EstimatorConfig
from schemas.enums import EstimatorKind
from schemas.models import FlowDocument, GmmDocument, KnnDocument, model_document_adapter
from schemas.segment import ReferenceSet

logger = logging.getLogger(__name__)


def create_density_model(kind: EstimatorKind, refset: ReferenceSet, config: EstimatorConfig, seed: int) -> DensityModel:
    """Factory that fits the estimator of the requested kind on one reference set.

    Args:
        kind: estimator family
        refset: rows to fit (already normalized when the kind asks for it)
        config: hyperparameters for every kind
        seed: seed for this fit

    Raises:
        ValueError: If an invalid estimator kind is provided
    """
    kind = EstimatorKind(kind)
    if kind == EstimatorKind.GMM:
        gmm = config.gmm
        return em_fit(
            refset.features,
            gmm.components,
            seed,
            max_iter=gmm.max_iter,
            rel_tol=gmm.rel_tol,
            variance_floor=gmm.variance_floor,
            kmeans_max_iter=gmm.kmeans_max_iter,
            normalized=refset.normalized,
        )
    elif kind == EstimatorKind.FLOW:
        return train_flow(refset.features, config.flow, seed=seed, normalized=refset.normalized)
    elif kind == EstimatorKind.KNN:
        return build_index(refset, config.knn.k)
    else:
        raise ValueError(f"Invalid estimator kind: {kind}")


def density_model_from_document(document: Union[GmmDocument, FlowDocument, KnnDocument]) -> DensityModel:
    if isinstance(document, GmmDocument):
        return GmmModel.from_document(document)
    elif isinstance(document, FlowDocument):
        return FlowModel.from_document(document)
    return KnnIndex.from_document(document)


def load_density_model(path: Union[str, Path]) -> DensityModel:
    """Read a JSON model file, dispatching on its "estimator" tag."""
    path = Path(path)
    try:
        document = model_document_adapter.validate_json(path.read_bytes())
    except (OSError, ValidationError) as e:
        logger.error(f"Failed to load model file {path}: {str(e)}")
        raise ModelLoadError(f"Cannot load model file {path}: {str(e)}")
    model = density_model_from_document(document)
    logger.info(f"Loaded {model.kind.value} model ({model.dim}-d) from {path}")
    return model
