from pydantic import BaseModel, ConfigDict, Field, field_validator
from typing import Optional, Tuple, Any, Dict, List
import numpy as np
from core.exceptions import (
    DataError,
    EmptyReferenceSet,
    DimMismatch,
    ZeroNormRow,
    IllegalLabelValue,
)
from schemas.enums import ReferenceKind, LabelValue

ALLOWED_LABELS = (LabelValue.FREE.value, LabelValue.OBSTACLE.value, LabelValue.IGNORE.value)


def _frozen_array(value: Any, dtype) -> np.ndarray:
    array = np.array(value, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


class RleMask(BaseModel):
    """Run-length encoded binary mask over a row-major scan, starting with the zero run."""
    model_config = ConfigDict(frozen=True)

    height: int = Field(..., ge=1)
    width: int = Field(..., ge=1)
    counts: Tuple[int, ...]

    @field_validator("counts")
    @classmethod
    def validate_counts(cls, v):
        if any(c < 0 for c in v):
            raise ValueError("RLE counts must be non-negative")
        return v

    @property
    def area(self) -> int:
        """Number of foreground pixels."""
        return int(sum(self.counts[1::2]))


class ContainerHeader(BaseModel):
    model_config = ConfigDict(frozen=True)

    record_count: int = Field(..., ge=0)
    dim: int = Field(..., ge=1)
    height: int = Field(..., ge=1)
    width: int = Field(..., ge=1)


class SegmentRecord(BaseModel):
    """One segment: its feature vector, mask and the quality scores used for filtering."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    image_id: int = Field(..., ge=0)
    segment_id: int = Field(..., ge=0)
    feature: np.ndarray
    mask: RleMask
    predicted_iou: float = Field(..., ge=0.0, le=1.0)
    stability_score: float = Field(..., ge=0.0, le=1.0)
    prompt_xy: Tuple[int, int]
    tap_point: Optional[str] = None

    @field_validator("feature", mode="before")
    @classmethod
    def validate_feature(cls, v):
        array = _frozen_array(v, np.float32)
        if array.ndim != 1 or array.size == 0:
            raise ValueError(f"feature must be a non-empty 1-D vector, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("feature contains non-finite values")
        return array

    @property
    def key(self) -> Tuple[int, int]:
        return (self.image_id, self.segment_id)

    def metadata(self) -> Dict[str, Any]:
        """JSON metadata line for the feature container (fixed key order)."""
        data = {
            "image_id": self.image_id,
            "segment_id": self.segment_id,
            "rle": list(self.mask.counts),
            "predicted_iou": self.predicted_iou,
            "stability_score": self.stability_score,
            "prompt_xy": list(self.prompt_xy),
        }
        if self.tap_point is not None:
            data["tap_point"] = self.tap_point
        return data

    def __eq__(self, other):
        if not isinstance(other, SegmentRecord):
            return NotImplemented
        return (
            self.metadata() == other.metadata()
            and self.mask == other.mask
            and np.array_equal(self.feature, other.feature)
        )


class LabelMap(BaseModel):
    """Per-pixel raster with values 0 = free, 1 = obstacle, 255 = ignore."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    pixels: np.ndarray

    @field_validator("pixels", mode="before")
    @classmethod
    def validate_pixels(cls, v):
        array = _frozen_array(v, np.uint8)
        if array.ndim != 2:
            raise ValueError(f"label map must be 2-D, got shape {array.shape}")
        return array

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "LabelMap":
        """Build a label map, raising IllegalLabelValue for values outside {0, 1, 255}."""
        raw = np.asarray(pixels)
        illegal = np.setdiff1d(np.unique(raw), ALLOWED_LABELS)
        if illegal.size:
            raise IllegalLabelValue(f"Illegal label values: {illegal.tolist()}")
        return cls(pixels=raw)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def ignore(self) -> np.ndarray:
        return self.pixels == LabelValue.IGNORE.value

    @property
    def positive(self) -> np.ndarray:
        return self.pixels == LabelValue.OBSTACLE.value

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


class ReferenceSet(BaseModel):
    """Feature matrix one distribution is fitted against."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    features: np.ndarray
    kind: ReferenceKind
    normalized: bool = False

    @classmethod
    def from_features(cls, features, kind: ReferenceKind, normalize: bool = False) -> "ReferenceSet":
        """
        Validate and ingest a reference matrix.

        Args:
            features: N x C matrix (any real dtype)
            kind: which distribution the rows sample
            normalize: L2-normalize every row at ingest

        Raises:
            EmptyReferenceSet: no rows
            DimMismatch: zero-length feature vectors or a non 2-D matrix
            ZeroNormRow: a row with zero norm
            DataError: non-finite entries
        """
        matrix = np.array(features, dtype=np.float64, copy=True)
        if matrix.ndim != 2:
            raise DimMismatch(f"Reference features must be N x C, got shape {matrix.shape}")
        if matrix.shape[0] == 0:
            raise EmptyReferenceSet(f"{kind.value} reference set has no rows")
        if matrix.shape[1] == 0:
            raise DimMismatch("Reference features have zero length")
        if not np.all(np.isfinite(matrix)):
            raise DataError(f"{kind.value} reference set contains non-finite values")
        norms = np.linalg.norm(matrix, axis=1)
        zero_rows = np.flatnonzero(norms == 0)
        if zero_rows.size:
            raise ZeroNormRow(f"{kind.value} reference set has zero-norm rows: {zero_rows[:10].tolist()}")
        if normalize:
            matrix = matrix / norms[:, None]
        matrix.setflags(write=False)
        return cls(features=matrix, kind=kind, normalized=normalize)

    @classmethod
    def from_records(cls, records: List[SegmentRecord], kind: ReferenceKind, normalize: bool = False) -> "ReferenceSet":
        if not records:
            raise EmptyReferenceSet(f"{kind.value} reference set has no rows")
        return cls.from_features(np.stack([r.feature for r in records]), kind, normalize)

    @classmethod
    def from_container(cls, path, kind: ReferenceKind, normalize: bool = False) -> "ReferenceSet":
        from utils.container import read_feature_container

        _, records = read_feature_container(path)
        return cls.from_records(records, kind, normalize)

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])
