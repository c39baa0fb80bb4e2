from pydantic import BaseModel, Field, TypeAdapter
from typing import Annotated, Dict, List, Literal, Optional, Union
from schemas.enums import EstimatorKind


class GmmDocument(BaseModel):
    estimator: Literal["gmm"] = "gmm"
    dim: int = Field(..., ge=1)
    components: int = Field(..., ge=1)
    normalized: bool = False
    variance_floor: float
    weights: List[float]
    means: List[List[float]]
    variances: List[List[float]]
    log_likelihood_history: List[float] = Field(default_factory=list)


class FlowDocument(BaseModel):
    estimator: Literal["flow"] = "flow"
    dim: int = Field(..., ge=1)
    normalized: bool = False
    blocks: int = Field(..., ge=1)
    hidden_width: int = Field(..., ge=1)
    hidden_layers: int = Field(..., ge=1)
    spline_bins: int = Field(..., ge=2)
    tail_bound: float = Field(..., gt=0.0)
    # parameter/buffer name -> nested lists, as produced by Tensor.tolist()
    state: Dict[str, Union[List, float]]
    loss_history: List[float] = Field(default_factory=list)


class KnnDocument(BaseModel):
    estimator: Literal["knn"] = "knn"
    dim: int = Field(..., ge=1)
    k: int = Field(..., ge=1)
    rows: List[List[float]]


ModelDocument = Annotated[Union[GmmDocument, FlowDocument, KnnDocument], Field(discriminator="estimator")]
model_document_adapter = TypeAdapter(ModelDocument)


class PairManifest(BaseModel):
    """Points at the free-space and obstacle model files of one classifier."""
    kind: EstimatorKind
    dim: int = Field(..., ge=1)
    threshold: float
    normalized: bool = False
    free_model: str
    obstacle_model: str
    summary: Optional[Dict[str, float]] = None
