from pathlib import Path
from typing import Iterable, List, Optional, Union
from collections import defaultdict
import logging
from core.exceptions import DimMismatch
from schemas.config import RunConfig
from schemas.pipeline import FilterConfig
from services.classifier_service import load_pair
from utils.container import read_feature_container
from utils.run_files import write_run_config
from workers.prediction.worker import ImagePrediction, PredictionWorker

logger = logging.getLogger(__name__)


class PredictionService:
    @staticmethod
    def cmd_predict(
        manifest: Union[str, Path],
        segments_container: Union[str, Path],
        out_dir: Union[str, Path],
        filter_config: Optional[FilterConfig] = None,
        image_ids: Optional[Iterable[int]] = None,
        run_config: Optional[RunConfig] = None,
        threads: Optional[int] = None,
    ) -> List[ImagePrediction]:
        """
        Write a decision map, a score map and per-segment decisions for every image.

        Images come from the container's records plus ``image_ids`` (images
        without any segment get an all-free decision map).

        Raises:
            DimMismatch: container and classifier disagree on C, or ROI on H x W
        """
        out_dir = Path(out_dir)
        filter_config = filter_config or FilterConfig()
        pair = load_pair(manifest)
        header, records = read_feature_container(segments_container)
        if header.dim != pair.dim:
            raise DimMismatch(f"Segments are {header.dim}-d, classifier expects {pair.dim}-d")
        if filter_config.roi is not None and filter_config.roi.shape != (header.height, header.width):
            raise DimMismatch(
                f"ROI is {filter_config.roi.shape[0]}x{filter_config.roi.shape[1]}, "
                f"container images are {header.height}x{header.width}"
            )

        by_image = defaultdict(list)
        for record in records:
            by_image[record.image_id].append(record)
        for image_id in image_ids or []:
            by_image.setdefault(int(image_id), [])

        out_dir.mkdir(parents=True, exist_ok=True)
        if run_config is not None:
            write_run_config(out_dir, run_config)

        worker = PredictionWorker(pair, filter_config, header.height, header.width, out_dir, threads=threads)
        jobs = [{"image_id": image_id, "records": by_image[image_id]} for image_id in sorted(by_image)]
        results = worker.run(jobs)

        obstacles = sum(r.obstacle_segments for r in results)
        kept = sum(r.kept_segments for r in results)
        logger.info(
            f"Predicted {len(results)} images with the {pair.kind.value} classifier: "
            f"{kept}/{len(records)} segments kept, {obstacles} obstacle segments"
        )
        return results
