from pydantic import BaseModel, Field, model_validator
from typing import Optional
from enum import Enum

# upscaled decoder grid: 32 channels pooled to 8 x 8 cells
UPSCALED_CHANNELS = 32
POOLED_SIDE = 8


class TapPoint(str, Enum):
    UPSCALED_GRID = "upscaled_grid"
    MASK_TOKEN = "mask_token"

    @staticmethod
    def get_all_values():
        return [tap.value for tap in TapPoint]

    @property
    def feature_dim(self) -> int:
        if self == TapPoint.UPSCALED_GRID:
            return UPSCALED_CHANNELS * POOLED_SIDE * POOLED_SIDE
        return 256


class ExtractionConfig(BaseModel):
    grid_points_per_side: int = Field(default=32, ge=1, description="Point prompts per image side.")
    model_type: str = Field(default="vit_h", description="Segment Anything model variant id.")
    checkpoint: Optional[str] = Field(None, description="Local path to the model weights.")
    tap_point: TapPoint = Field(default=TapPoint.UPSCALED_GRID, description="Mask-decoder hook site the feature is read from.")
    feature_dim: Optional[int] = Field(None, description="Expected feature length; defaults to the tap point's size.")
    points_per_batch: int = Field(default=16, ge=1, description="Point prompts decoded together.")
    stability_offset: float = Field(default=1.0, gt=0.0, description="Logit offset for the stability score.")
    device: str = Field(default="cpu", description="Torch device the model runs on.")

    @model_validator(mode="after")
    def validate_feature_dim(self):
        if self.feature_dim is None:
            self.feature_dim = self.tap_point.feature_dim
        elif self.feature_dim != self.tap_point.feature_dim:
            raise ValueError(
                f"tap point {self.tap_point.value} yields {self.tap_point.feature_dim}-d features, "
                f"configured {self.feature_dim}"
            )
        return self
