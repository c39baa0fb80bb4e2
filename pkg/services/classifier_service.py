"""
Likelihood-ratio classifier built from a free-space and an obstacle estimator.
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union
import json
import logging
import numpy as np
from core.config import settings
from core.exceptions import DimMismatch, KindMismatch, ModelLoadError
from estimators.base import DensityModel
from estimators.factory import create_density_model, load_density_model
from estimators.flow import FlowModel
from estimators.gmm import GmmModel
from estimators.knn import KnnIndex, ratio_from_similarities
from schemas.config import EstimatorConfig
from schemas.enums import EstimatorKind, ReferenceKind
from schemas.models import PairManifest
from schemas.pipeline import LrDecision
from schemas.segment import ReferenceSet, SegmentRecord
from utils.seeding import spawn_seeds

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
FREE_MODEL_FILE = "free_model.json"
OBSTACLE_MODEL_FILE = "obstacle_model.json"


class EstimatorPair:
    """Free-space and obstacle models of one kind sharing one feature dimensionality."""

    def __init__(self, kind: EstimatorKind, free_model: DensityModel, obstacle_model: DensityModel, threshold: Optional[float] = None):
        self.kind = EstimatorKind(kind)
        for role, model in (("free", free_model), ("obstacle", obstacle_model)):
            if model.kind != self.kind:
                raise KindMismatch(f"{role} model is {model.kind.value}, pair is {self.kind.value}")
        if free_model.dim != obstacle_model.dim:
            raise DimMismatch(f"free model is {free_model.dim}-d, obstacle model is {obstacle_model.dim}-d")
        self.free_model = free_model
        self.obstacle_model = obstacle_model
        if threshold is None:
            threshold = 1.0 if self.kind == EstimatorKind.KNN else 0.0
        self.threshold = float(threshold)

    @property
    def dim(self) -> int:
        return self.free_model.dim

    def swapped(self) -> "EstimatorPair":
        """The same pair with the roles of the two models exchanged."""
        return EstimatorPair(self.kind, self.obstacle_model, self.free_model, self.threshold)


def _ingest(refset: ReferenceSet, normalize: bool) -> ReferenceSet:
    if normalize and not refset.normalized:
        return ReferenceSet.from_features(refset.features, refset.kind, normalize=True)
    return refset


def fit_pair(
    kind: EstimatorKind,
    refset_free: ReferenceSet,
    refset_obstacle: ReferenceSet,
    config: Optional[EstimatorConfig] = None,
) -> EstimatorPair:
    """
    Fit one estimator per reference set.

    Raises:
        KindMismatch: reference sets passed in the wrong roles
        DimMismatch: the two sets differ in C
        TooFewPoints, EmptyData, KTooLarge, ...: propagated from the estimators
    """
    kind = EstimatorKind(kind)
    config = config or EstimatorConfig()
    if refset_free.kind != ReferenceKind.FREE or refset_obstacle.kind != ReferenceKind.OBSTACLE:
        raise KindMismatch(
            f"Expected (free, obstacle) reference sets, got ({refset_free.kind.value}, {refset_obstacle.kind.value})"
        )
    if refset_free.dim != refset_obstacle.dim:
        raise DimMismatch(f"free references are {refset_free.dim}-d, obstacle references are {refset_obstacle.dim}-d")

    normalize = config.normalize_for(kind)
    free_set = _ingest(refset_free, normalize)
    obstacle_set = _ingest(refset_obstacle, normalize)
    free_seed, obstacle_seed = spawn_seeds(config.seed, 2)

    logger.info(
        f"Fitting {kind.value} pair: {free_set.size} free / {obstacle_set.size} obstacle rows, "
        f"C={free_set.dim}, normalized={normalize}"
    )
    free_model = create_density_model(kind, free_set, config, free_seed)
    obstacle_model = create_density_model(kind, obstacle_set, config, obstacle_seed)
    return EstimatorPair(kind, free_model, obstacle_model, config.decision_threshold(kind))


def lr_score(pair: EstimatorPair, t) -> Union[float, np.ndarray]:
    """
    log p_obstacle(t) - log p_free(t) for gmm/flow; the average-similarity
    ratio for knn. Accepts one C-vector or an N x C matrix.
    """
    obstacle = pair.obstacle_model.score(t)
    free = pair.free_model.score(t)
    if pair.kind == EstimatorKind.KNN:
        ratio = ratio_from_similarities(obstacle, free)
        return float(ratio) if np.ndim(t) == 1 else ratio
    return obstacle - free


def single_density_score(pair: EstimatorPair, t, which: ReferenceKind) -> Union[float, np.ndarray]:
    """
    Obstacle-ness from one model alone: -log p_free(t) or log p_obstacle(t)
    (negated / plain average similarity for knn).
    """
    which = ReferenceKind(which)
    if which == ReferenceKind.FREE:
        return -pair.free_model.score(t)
    return pair.obstacle_model.score(t)


def is_obstacle(pair: EstimatorPair, score) -> Union[bool, np.ndarray]:
    """Ties go to obstacle for every kind."""
    verdict = np.asarray(score) >= pair.threshold
    return bool(verdict) if verdict.ndim == 0 else verdict


def decide(pair: EstimatorPair, t, image_id: int = 0, segment_id: int = 0) -> LrDecision:
    score = lr_score(pair, t)
    return LrDecision(image_id=image_id, segment_id=segment_id, score=score, is_obstacle=is_obstacle(pair, score))


def decide_records(pair: EstimatorPair, records: Sequence[SegmentRecord]) -> List[LrDecision]:
    """Score every record in one batch; decisions come back in record order."""
    if not records:
        return []
    features = np.stack([record.feature for record in records])
    scores = lr_score(pair, features)
    verdicts = is_obstacle(pair, scores)
    return [
        LrDecision(image_id=r.image_id, segment_id=r.segment_id, score=float(s), is_obstacle=bool(v))
        for r, s, v in zip(records, scores, verdicts)
    ]


def to_log_scale(kind: EstimatorKind, scores, clamp: Optional[float] = None) -> np.ndarray:
    """
    Map classifier scores onto one monotone log scale clipped to [-clamp, clamp].

    knn ratios go through log(); +inf maps to +clamp and non-positive ratios to -clamp.
    """
    clamp = settings.LOG_RATIO_CLAMP if clamp is None else clamp
    values = np.asarray(scores, dtype=np.float64)
    if EstimatorKind(kind) == EstimatorKind.KNN:
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.where(values > 0, np.log(np.where(values > 0, values, 1.0)), -np.inf)
    return np.clip(values, -clamp, clamp)


def summarize_model(model: DensityModel, refset: Optional[ReferenceSet] = None) -> Dict[str, float]:
    """Training summary: final mean log-density for gmm/flow, index size for knn."""
    if isinstance(model, KnnIndex):
        return {"index_size": float(model.size), "k": float(model.k)}
    if isinstance(model, GmmModel) and model.log_likelihood_history:
        return {"mean_log_density": model.log_likelihood_history[-1], "iterations": float(len(model.log_likelihood_history))}
    if refset is not None:
        return {"mean_log_density": float(np.mean(model.score(refset.features)))}
    if isinstance(model, FlowModel) and model.loss_history:
        return {"mean_log_density": -model.loss_history[-1]}
    return {}


def save_pair(pair: EstimatorPair, directory: Union[str, Path], summary: Optional[Dict[str, float]] = None) -> Path:
    """Write both model files and the manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pair.free_model.save(directory / FREE_MODEL_FILE)
    pair.obstacle_model.save(directory / OBSTACLE_MODEL_FILE)
    manifest = PairManifest(
        kind=pair.kind,
        dim=pair.dim,
        threshold=pair.threshold,
        normalized=pair.free_model.normalized,
        free_model=FREE_MODEL_FILE,
        obstacle_model=OBSTACLE_MODEL_FILE,
        summary=summary,
    )
    path = directory / MANIFEST_FILE
    path.write_text(manifest.model_dump_json(indent=2))
    logger.info(f"Wrote {pair.kind.value} pair manifest to {path}")
    return path


def load_pair(manifest_path: Union[str, Path]) -> EstimatorPair:
    """
    Raises:
        ModelLoadError: unreadable manifest or model file
        KindMismatch: a model file's tag disagrees with the manifest
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_FILE
    try:
        manifest = PairManifest.model_validate(json.loads(manifest_path.read_text()))
    except Exception as e:
        logger.error(f"Failed to read manifest {manifest_path}: {str(e)}")
        raise ModelLoadError(f"Cannot read manifest {manifest_path}: {str(e)}")
    free_model = load_density_model(manifest_path.parent / manifest.free_model)
    obstacle_model = load_density_model(manifest_path.parent / manifest.obstacle_model)
    pair = EstimatorPair(manifest.kind, free_model, obstacle_model, manifest.threshold)
    if pair.dim != manifest.dim:
        raise DimMismatch(f"Manifest declares C={manifest.dim}, models are {pair.dim}-d")
    return pair
