"""
Pixel-level (AP, FPR95) and component-level (sIoU_gt, PPV, mean F1) metrics.

Pixels labelled ignore (255) in the ground truth are excluded everywhere.
Higher scores mean "more obstacle-like".
"""
from typing import List, Optional, Sequence, Tuple
import logging
import numpy as np
from scipy import ndimage
from sklearn.metrics import average_precision_score, roc_curve
from core.config import settings
from core.exceptions import ShapeMismatch
from schemas.enums import Connectivity
from schemas.evaluation import ComponentMetrics, ComponentSet, DEFAULT_THRESHOLD_GRID, F1Row, FprResult
from schemas.pipeline import PixelScoreMap
from schemas.segment import LabelMap

logger = logging.getLogger(__name__)

TARGET_TPR = 0.95


def connected_components(mask: np.ndarray, connectivity: Connectivity = Connectivity.EIGHT) -> ComponentSet:
    """Label connected foreground regions; ids follow the first pixel of each region in row-major order."""
    mask = np.asarray(mask, dtype=bool)
    connectivity = Connectivity(connectivity)
    structure = ndimage.generate_binary_structure(2, 2 if connectivity == Connectivity.EIGHT else 1)
    raw, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return ComponentSet(labels=np.zeros(mask.shape, dtype=np.int32), n=0)

    flat = raw.ravel()
    values, first_index = np.unique(flat, return_index=True)
    foreground = values > 0
    order = values[foreground][np.argsort(first_index[foreground], kind="stable")]
    relabel = np.zeros(n + 1, dtype=np.int32)
    relabel[order] = np.arange(1, n + 1, dtype=np.int32)
    return ComponentSet(labels=relabel[raw], n=int(n))


def _check_shapes(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: prediction is {a.shape[0]}x{a.shape[1]}, ground truth is {b.shape[0]}x{b.shape[1]}")


def valid_pixels(score_map: PixelScoreMap, gt: LabelMap) -> Tuple[np.ndarray, np.ndarray]:
    """Scores and binary labels of the non-ignore pixels, flattened."""
    _check_shapes(score_map.scores, gt.pixels, "score map")
    valid = ~gt.ignore
    return score_map.scores[valid].astype(np.float64), gt.positive[valid]


def ap_from_pixels(scores: np.ndarray, labels: np.ndarray) -> float:
    """Step-wise precision-recall summation over descending unique thresholds; 0 without positives."""
    if not np.any(labels):
        return 0.0
    return float(average_precision_score(labels, scores))


def fpr95_from_pixels(scores: np.ndarray, labels: np.ndarray, floor: Optional[float] = None) -> FprResult:
    """
    Lowest FPR among thresholds reaching 95% TPR. Pixels tied at a
    threshold are counted together, so ties never favour the prediction.
    """
    floor = settings.SCORE_FLOOR if floor is None else floor
    positives = int(np.count_nonzero(labels))
    if positives == 0:
        return FprResult(value=None, attained=False)
    if positives == labels.size:
        # no negatives: any threshold has FPR 0
        reach = np.sort(scores)[::-1][int(np.ceil(TARGET_TPR * positives)) - 1]
        return FprResult(value=0.0, attained=bool(reach > np.float32(floor)))

    fpr, tpr, thresholds = roc_curve(labels, scores, drop_intermediate=False)
    index = int(np.flatnonzero(tpr >= TARGET_TPR)[0])
    attained = bool(thresholds[index] > np.float32(floor))
    return FprResult(value=float(fpr[index]), attained=attained)


def average_precision(score_map: PixelScoreMap, gt: LabelMap) -> float:
    """
    Raises:
        ShapeMismatch: maps differ in size
    """
    scores, labels = valid_pixels(score_map, gt)
    if not np.any(labels):
        logger.warning("Average precision over a map without positive pixels is reported as 0")
    return ap_from_pixels(scores, labels)


def fpr_at_95tpr(score_map: PixelScoreMap, gt: LabelMap) -> FprResult:
    """
    Raises:
        ShapeMismatch: maps differ in size
    """
    scores, labels = valid_pixels(score_map, gt)
    return fpr95_from_pixels(scores, labels, score_map.floor)


def f1_table(siou_values: Sequence[float], ppv_values: Sequence[float], thresholds: Sequence[float]) -> List[F1Row]:
    siou_values = np.asarray(siou_values, dtype=np.float64)
    ppv_values = np.asarray(ppv_values, dtype=np.float64)
    rows = []
    for tau in thresholds:
        tp = int(np.count_nonzero(siou_values > tau))
        fn = int(siou_values.size - tp)
        fp = int(np.count_nonzero(ppv_values <= tau))
        denominator = 2 * tp + fn + fp
        f1 = 1.0 if denominator == 0 else 2 * tp / denominator
        rows.append(F1Row(threshold=float(tau), tp=tp, fn=fn, fp=fp, f1=f1))
    return rows


def summarize_components(
    siou_values: Sequence[float],
    ppv_values: Sequence[float],
    thresholds: Optional[Sequence[float]] = None,
) -> ComponentMetrics:
    """Component metrics from per-component sIoU / PPV values (one image or pooled)."""
    thresholds = DEFAULT_THRESHOLD_GRID if thresholds is None else list(thresholds)
    table = f1_table(siou_values, ppv_values, thresholds)
    return ComponentMetrics(
        siou_values=list(siou_values),
        ppv_values=list(ppv_values),
        siou_gt=float(np.mean(siou_values)) if len(siou_values) else None,
        ppv=float(np.mean(ppv_values)) if len(ppv_values) else None,
        mean_f1=float(np.mean([row.f1 for row in table])),
        f1_table=table,
    )


def component_metrics(
    pred: LabelMap,
    gt: LabelMap,
    thresholds: Optional[Sequence[float]] = None,
    connectivity: Connectivity = Connectivity.EIGHT,
) -> ComponentMetrics:
    """
    sIoU per gt component g: |g & P| / |g | (P - A_g)|, with P every predicted
    positive and A_g the other gt components. PPV per predicted component p:
    |p & G| / |p|. At each threshold tau: TP = #{sIoU > tau},
    FN = #gt - TP, FP = #{PPV <= tau}.

    Raises:
        ShapeMismatch: maps differ in size
    """
    _check_shapes(pred.pixels, gt.pixels, "decision map")
    valid = ~gt.ignore
    predicted = pred.positive & valid
    gt_positive = gt.positive

    gt_components = connected_components(gt_positive, connectivity)
    pred_components = connected_components(predicted, connectivity)

    siou_values = []
    for g in gt_components.masks():
        others = gt_positive & ~g
        intersection = np.count_nonzero(g & predicted)
        union = np.count_nonzero(g | (predicted & ~others))
        siou_values.append(intersection / union)

    ppv_values = []
    for p in pred_components.masks():
        ppv_values.append(np.count_nonzero(p & gt_positive) / np.count_nonzero(p))

    return summarize_components(siou_values, ppv_values, thresholds)
