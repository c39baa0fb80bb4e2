from pydantic import BaseModel, ConfigDict, Field
from typing import List, Optional
import numpy as np

# IoU / PPV thresholds for component-level F1: 0.25, 0.30, ..., 0.75
DEFAULT_THRESHOLD_GRID = [round(0.25 + 0.05 * i, 2) for i in range(11)]


class ComponentSet(BaseModel):
    """Connected components of a binary raster; ids 1..n in order of first raster occurrence."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    labels: np.ndarray
    n: int = Field(..., ge=0)

    def masks(self) -> List[np.ndarray]:
        return [self.labels == i for i in range(1, self.n + 1)]


class FprResult(BaseModel):
    """False-positive rate at 95% true-positive rate.

    ``attained`` is False when 95% TPR is only reached by counting pixels at
    or below the uncovered-pixel floor (``value`` then holds the rate at the
    floor threshold) or when there are no positive pixels (``value`` is None).
    """
    value: Optional[float] = None
    attained: bool = True


class F1Row(BaseModel):
    threshold: float
    tp: int
    fn: int
    fp: int
    f1: float


class ComponentMetrics(BaseModel):
    """Component-level scores of one image (or a pooled set of images)."""
    siou_values: List[float] = Field(default_factory=list)  # one per gt component
    ppv_values: List[float] = Field(default_factory=list)  # one per predicted component
    siou_gt: Optional[float] = None
    ppv: Optional[float] = None
    mean_f1: float
    f1_table: List[F1Row]


class EvalReport(BaseModel):
    image_id: Optional[int] = None
    ap: float
    fpr95: FprResult
    siou_gt: Optional[float] = None
    ppv: Optional[float] = None
    mean_f1: float
    f1_table: List[F1Row]
    num_gt_components: int = 0
    num_pred_components: int = 0
    num_positive_pixels: int = 0
    num_negative_pixels: int = 0
    empty_eval: bool = False  # no positive pixels to rank


class EvalSummary(BaseModel):
    aggregate: EvalReport
    images: List[EvalReport]
