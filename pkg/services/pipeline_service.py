"""
Per-image segment filtering and composition of pixel decision / score maps.
"""
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import logging
import numpy as np
from core.config import settings
from core.exceptions import MissingDecision, ShapeMismatch
from schemas.enums import LabelValue
from schemas.pipeline import FilterConfig, LrDecision, PixelScoreMap
from schemas.segment import LabelMap, SegmentRecord
from utils.rle import rle_decode

logger = logging.getLogger(__name__)

Key = Tuple[int, int]


def _check_roi(roi: Optional[np.ndarray], height: int, width: int) -> Optional[np.ndarray]:
    if roi is None:
        return None
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != (height, width):
        raise ShapeMismatch(f"ROI is {roi.shape[0]}x{roi.shape[1]}, image is {height}x{width}")
    return roi


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def filter_segments(records: Sequence[SegmentRecord], config: Optional[FilterConfig] = None) -> List[SegmentRecord]:
    """
    Drop low-quality records, records outside the ROI and near-duplicates.

    Duplicates are removed by greedy non-maximum suppression on mask IoU,
    visiting records by descending predicted_iou (ties: lower segment_id).
    Survivors keep their input order.
    """
    config = config or FilterConfig()
    candidates = [
        r for r in records
        if r.predicted_iou >= config.min_predicted_iou and r.stability_score >= config.min_stability
    ]
    masks: Dict[Key, np.ndarray] = {r.key: rle_decode(r.mask) for r in candidates}

    if config.roi is not None and candidates:
        first = candidates[0].mask
        roi = _check_roi(config.roi, first.height, first.width)
        candidates = [r for r in candidates if np.any(masks[r.key] & roi)]

    kept: List[SegmentRecord] = []
    for record in sorted(candidates, key=lambda r: (-r.predicted_iou, r.segment_id)):
        mask = masks[record.key]
        if all(mask_iou(mask, masks[other.key]) < config.dedup_iou_threshold for other in kept):
            kept.append(record)

    survivors = {r.key for r in kept}
    result = [r for r in records if r.key in survivors]
    logger.debug(f"filter_segments kept {len(result)} of {len(records)} records")
    return result


def _lookup(decisions: Mapping[Key, object], record: SegmentRecord):
    try:
        return decisions[record.key]
    except KeyError:
        raise MissingDecision(f"No decision for segment {record.key}")


def _by_key(decisions) -> Mapping[Key, object]:
    if isinstance(decisions, Mapping):
        return decisions
    return {d.key: d for d in decisions}


def compose_decision_map(
    records: Sequence[SegmentRecord],
    decisions,
    height: int,
    width: int,
    roi: Optional[np.ndarray] = None,
) -> LabelMap:
    """Pixel = 1 iff covered by an obstacle-decided mask (inside the ROI when given).

    Raises:
        MissingDecision: a record without a decision
    """
    roi = _check_roi(roi, height, width)
    decisions = _by_key(decisions)
    obstacle = np.zeros((height, width), dtype=bool)
    for record in records:
        decision: LrDecision = _lookup(decisions, record)
        if decision.is_obstacle:
            obstacle |= rle_decode(record.mask)
    if roi is not None:
        obstacle &= roi
    pixels = np.where(obstacle, LabelValue.OBSTACLE.value, LabelValue.FREE.value).astype(np.uint8)
    return LabelMap(pixels=pixels)


def compose_score_map(
    records: Sequence[SegmentRecord],
    scores: Mapping[Key, float],
    height: int,
    width: int,
    floor: Optional[float] = None,
    roi: Optional[np.ndarray] = None,
) -> PixelScoreMap:
    """
    Pixel score = max over the covering segments' (log-scale) scores.

    Pixels no segment covers, and pixels outside the ROI, hold ``floor`` and
    are marked uncovered.

    Raises:
        MissingDecision: a record without a score
    """
    floor = settings.SCORE_FLOOR if floor is None else floor
    roi = _check_roi(roi, height, width)
    best = np.full((height, width), -np.inf, dtype=np.float64)
    for record in records:
        score = float(_lookup(scores, record))
        mask = rle_decode(record.mask)
        best[mask] = np.maximum(best[mask], score)
    covered = np.isfinite(best)
    if roi is not None:
        covered &= roi

    scores32 = np.where(covered, best, floor).astype(np.float32)
    # keep the sign of small negative scores that round to -0.0
    scores32 = np.where(covered & (best < 0) & (scores32 >= 0), np.nextafter(np.float32(0), np.float32(-1)), scores32)
    return PixelScoreMap(scores=scores32.astype(np.float32), covered=covered, floor=floor)
