from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Optional, Tuple
import numpy as np
from core.config import settings


class FilterConfig(BaseModel):
    """Quality, duplicate and region-of-interest filtering of raw segments."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    min_predicted_iou: float = Field(default_factory=lambda: settings.MIN_PREDICTED_IOU, ge=0.0, le=1.0)
    min_stability: float = Field(default_factory=lambda: settings.MIN_STABILITY, ge=0.0, le=1.0)
    dedup_iou_threshold: float = Field(default_factory=lambda: settings.DEDUP_IOU_THRESHOLD, ge=0.0, le=1.0)
    roi: Optional[np.ndarray] = Field(default=None, exclude=True)

    @field_validator("roi", mode="before")
    @classmethod
    def validate_roi(cls, v):
        if v is None:
            return None
        roi = np.array(v, dtype=bool, copy=True)
        if roi.ndim != 2:
            raise ValueError(f"roi must be an H x W raster, got shape {roi.shape}")
        roi.setflags(write=False)
        return roi


class LrDecision(BaseModel):
    """Per-segment likelihood-ratio score and verdict."""
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    image_id: int
    segment_id: int
    score: float  # log-ratio for gmm/flow, ratio for knn
    is_obstacle: bool

    @property
    def key(self) -> Tuple[int, int]:
        return (self.image_id, self.segment_id)


class PixelScoreMap(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    scores: np.ndarray
    covered: np.ndarray
    floor: float = Field(default_factory=lambda: settings.SCORE_FLOOR)

    @model_validator(mode="after")
    def validate_floor(self):
        if self.scores.shape != self.covered.shape or self.scores.ndim != 2:
            raise ValueError(f"scores {self.scores.shape} and covered {self.covered.shape} must be equal H x W shapes")
        if np.any(self.scores[~self.covered] != np.float32(self.floor)):
            raise ValueError("uncovered pixels must hold the floor score")
        return self
