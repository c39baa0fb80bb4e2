from pathlib import Path
from typing import Any, Dict, Optional
import logging
from pydantic import BaseModel
from schemas.pipeline import FilterConfig
from services.classifier_service import EstimatorPair, decide_records, to_log_scale
from services.pipeline_service import compose_decision_map, compose_score_map, filter_segments
from utils.label_map import write_label_map
from utils.run_files import decision_name, decisions_name, scores_name
from utils.score_map import write_score_map
from workers.base import BaseWorker

logger = logging.getLogger(__name__)


class ImagePrediction(BaseModel):
    image_id: int
    raw_segments: int
    kept_segments: int
    obstacle_segments: int
    obstacle_pixels: int


class PredictionWorker(BaseWorker):
    """Filters, scores and rasterizes the segments of one image per job."""

    def __init__(
        self,
        pair: EstimatorPair,
        filter_config: FilterConfig,
        height: int,
        width: int,
        out_dir: Path,
        threads: Optional[int] = None,
    ):
        super().__init__("prediction", threads=threads)
        self.pair = pair
        self.filter_config = filter_config
        self.height = height
        self.width = width
        self.out_dir = Path(out_dir)

    def process(self, job_data: Dict[str, Any]) -> ImagePrediction:
        image_id = job_data["image_id"]
        records = job_data["records"]

        kept = filter_segments(records, self.filter_config)
        decisions = decide_records(self.pair, kept)
        log_scores = to_log_scale(self.pair.kind, [d.score for d in decisions])
        scores = {d.key: float(s) for d, s in zip(decisions, log_scores)}

        roi = self.filter_config.roi
        decision_map = compose_decision_map(kept, decisions, self.height, self.width, roi)
        score_map = compose_score_map(kept, scores, self.height, self.width, roi=roi)

        write_label_map(self.out_dir / decision_name(image_id), decision_map)
        write_score_map(self.out_dir / scores_name(image_id), score_map)
        lines = [decision.model_dump_json() + "\n" for decision in decisions]
        (self.out_dir / decisions_name(image_id)).write_text("".join(lines))

        result = ImagePrediction(
            image_id=image_id,
            raw_segments=len(records),
            kept_segments=len(kept),
            obstacle_segments=sum(d.is_obstacle for d in decisions),
            obstacle_pixels=int(decision_map.positive.sum()),
        )
        logger.debug(f"Image {image_id}: {result.kept_segments}/{result.raw_segments} segments kept, {result.obstacle_segments} obstacles")
        return result
