from pathlib import Path
from typing import Any, Dict, Optional, Sequence
import logging
import numpy as np
from core.exceptions import MissingDecision
from schemas.enums import Connectivity
from schemas.evaluation import EvalReport
from services.metrics_service import (
    ap_from_pixels,
    component_metrics,
    fpr95_from_pixels,
    valid_pixels,
)
from utils.label_map import read_label_map
from utils.run_files import decision_name, gt_name, scores_name
from utils.score_map import read_score_map
from workers.base import BaseWorker

logger = logging.getLogger(__name__)


class EvaluationWorker(BaseWorker):
    """Scores one image's prediction against its ground truth per job."""

    def __init__(
        self,
        pred_dir: Path,
        gt_dir: Path,
        thresholds: Sequence[float],
        connectivity: Connectivity = Connectivity.EIGHT,
        threads: Optional[int] = None,
    ):
        super().__init__("evaluation", threads=threads)
        self.pred_dir = Path(pred_dir)
        self.gt_dir = Path(gt_dir)
        self.thresholds = list(thresholds)
        self.connectivity = connectivity

    def process(self, job_data: Dict[str, Any]) -> Dict[str, Any]:
        image_id = job_data["image_id"]
        scores_path = self.pred_dir / scores_name(image_id)
        if not scores_path.exists():
            raise MissingDecision(f"No score map for image {image_id} in {self.pred_dir}")

        gt = read_label_map(self.gt_dir / gt_name(image_id))
        pred = read_label_map(self.pred_dir / decision_name(image_id))
        score_map = read_score_map(scores_path)

        scores, labels = valid_pixels(score_map, gt)
        components = component_metrics(pred, gt, self.thresholds, self.connectivity)
        positives = int(np.count_nonzero(labels))
        report = EvalReport(
            image_id=image_id,
            ap=ap_from_pixels(scores, labels),
            fpr95=fpr95_from_pixels(scores, labels, score_map.floor),
            siou_gt=components.siou_gt,
            ppv=components.ppv,
            mean_f1=components.mean_f1,
            f1_table=components.f1_table,
            num_gt_components=len(components.siou_values),
            num_pred_components=len(components.ppv_values),
            num_positive_pixels=positives,
            num_negative_pixels=int(labels.size - positives),
            empty_eval=positives == 0,
        )
        return {
            "report": report,
            "scores": scores,
            "labels": labels,
            "floor": score_map.floor,
            "siou_values": components.siou_values,
            "ppv_values": components.ppv_values,
        }
