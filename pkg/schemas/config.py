from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Optional, List
from core.config import settings
from schemas.enums import EstimatorKind, Scenario


class GmmConfig(BaseModel):
    components: int = Field(default_factory=lambda: settings.DEFAULT_GMM_COMPONENTS, ge=1)
    max_iter: int = Field(default_factory=lambda: settings.GMM_MAX_ITER, ge=1)
    rel_tol: float = Field(default_factory=lambda: settings.GMM_REL_TOL, ge=0.0)
    variance_floor: float = Field(default_factory=lambda: settings.GMM_VARIANCE_FLOOR, gt=0.0)
    kmeans_max_iter: int = Field(default_factory=lambda: settings.KMEANS_MAX_ITER, ge=1)
    normalize: bool = False


class FlowConfig(BaseModel):
    blocks: int = Field(default_factory=lambda: settings.FLOW_BLOCKS, ge=1)
    hidden_width: int = Field(default_factory=lambda: settings.FLOW_HIDDEN_WIDTH, ge=1)
    hidden_layers: int = Field(default_factory=lambda: settings.FLOW_HIDDEN_LAYERS, ge=1)
    spline_bins: int = Field(default_factory=lambda: settings.FLOW_SPLINE_BINS, ge=2)
    tail_bound: float = Field(default_factory=lambda: settings.FLOW_TAIL_BOUND, gt=0.0)
    epochs: int = Field(default_factory=lambda: settings.FLOW_EPOCHS, ge=0)
    batch_size: int = Field(default_factory=lambda: settings.FLOW_BATCH_SIZE, ge=1)
    step_size: float = Field(default_factory=lambda: settings.FLOW_STEP_SIZE, gt=0.0)
    normalize: bool = False

    @field_validator("spline_bins")
    @classmethod
    def validate_bins(cls, v):
        # minimum bin width/height 1e-3 must leave room for every bin
        if v * 1e-3 >= 1.0:
            raise ValueError(f"spline_bins too large for the minimum bin size: {v}")
        return v


class KnnConfig(BaseModel):
    k: int = Field(default_factory=lambda: settings.DEFAULT_KNN_K, ge=1)
    normalize: bool = True


class EstimatorConfig(BaseModel):
    """Hyperparameters for every estimator kind plus the shared seed and decision threshold."""
    seed: int = 0
    gmm: GmmConfig = Field(default_factory=GmmConfig)
    flow: FlowConfig = Field(default_factory=FlowConfig)
    knn: KnnConfig = Field(default_factory=KnnConfig)
    threshold: Optional[float] = None  # None -> 0 for log-ratios, 1 for knn ratios

    def decision_threshold(self, kind: EstimatorKind) -> float:
        if self.threshold is not None:
            return self.threshold
        return 1.0 if kind == EstimatorKind.KNN else 0.0

    def normalize_for(self, kind: EstimatorKind) -> bool:
        return {
            EstimatorKind.GMM: self.gmm.normalize,
            EstimatorKind.FLOW: self.flow.normalize,
            EstimatorKind.KNN: self.knn.normalize,
        }[kind]


class SynthConfig(BaseModel):
    scenario: Scenario = Scenario.BLOBS
    seed: int = 0
    dim: int = Field(default=2, ge=2)
    n_reference: int = Field(default=1000, ge=1)
    n_images: int = Field(default=8, ge=1)
    height: int = Field(default=48, ge=32)
    width: int = Field(default=64, ge=32)
    separation: float = Field(default=10.0, gt=0.0)
    offset: float = Field(default=20.0, ge=0.0)
    obstacles_per_image: int = Field(default=1, ge=0)


class RunConfig(BaseModel):
    """Everything a run depends on; echoed next to every output for reproducibility."""
    command: str
    seed: int = 0
    kind: Optional[EstimatorKind] = None
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    min_predicted_iou: Optional[float] = None
    min_stability: Optional[float] = None
    dedup_iou_threshold: Optional[float] = None
    threshold_grid: Optional[List[float]] = None
    synth: Optional[SynthConfig] = None
    paths: dict = Field(default_factory=dict)

    @model_validator(mode="after")
    def sync_seed(self):
        self.estimator.seed = self.seed
        return self
