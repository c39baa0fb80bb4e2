"""
Offline segment extraction: ``python -m workers.sam_extractor.main --images a.png b.png --out segments.lrsf``.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional
import argparse
import logging
import sys
from pydantic import ValidationError
from core.config import settings
from core.exceptions import LrsegError, ShapeMismatch
from schemas.segment import SegmentRecord
from utils.container import header_for, write_feature_container
from workers.base import BaseWorker
from workers.sam_extractor.extractor import SegmentExtractor, extract_segments, load_image
from workers.sam_extractor.schemas.extraction import ExtractionConfig, TapPoint

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.LRSEG_LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)

logger = logging.getLogger(__name__)


class SamExtractionWorker(BaseWorker):
    """Extracts the segments of one image per job; one image at a time, one shared model."""

    def __init__(self, config: ExtractionConfig, extractor: Optional[SegmentExtractor] = None):
        super().__init__("sam-extraction", threads=1)
        self.config = config
        self.extractor = extractor or SegmentExtractor(config)

    def describe(self, job_data: Dict[str, Any]) -> str:
        return f"image {job_data['image_id']} ({job_data['path']})"

    def process(self, job_data: Dict[str, Any]) -> List[SegmentRecord]:
        return extract_segments(job_data["path"], self.config, job_data["image_id"], self.extractor)


def extract_container(
    image_paths: List[Path],
    out_path: Path,
    config: ExtractionConfig,
    first_image_id: int = 0,
    extractor: Optional[SegmentExtractor] = None,
) -> Path:
    """
    Extract every image into one container; image ids follow the argument order.

    Raises:
        ShapeMismatch: the images differ in size
    """
    sizes = {tuple(load_image(path).shape[:2]) for path in image_paths}
    if len(sizes) > 1:
        raise ShapeMismatch(f"All images in one container must share H x W, got {sorted(sizes)}")
    (height, width), = sizes

    worker = SamExtractionWorker(config, extractor)
    try:
        jobs = [{"image_id": first_image_id + i, "path": path} for i, path in enumerate(image_paths)]
        records = [record for per_image in worker.run(jobs) for record in per_image]
    finally:
        worker.extractor.close()
    write_feature_container(out_path, header_for(records, config.feature_dim, height, width), records)
    return out_path


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Extract segment records with Segment Anything")
    parser.add_argument("--images", required=True, nargs="+", type=Path)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--model-type", default="vit_h")
    parser.add_argument("--grid-points-per-side", type=int, default=32)
    parser.add_argument("--tap-point", choices=TapPoint.get_all_values(), default=TapPoint.UPSCALED_GRID.value)
    parser.add_argument("--feature-dim", type=int, default=None)
    parser.add_argument("--points-per-batch", type=int, default=16)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--first-image-id", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        config = ExtractionConfig(
            grid_points_per_side=args.grid_points_per_side,
            model_type=args.model_type,
            checkpoint=args.checkpoint,
            tap_point=args.tap_point,
            feature_dim=args.feature_dim,
            points_per_batch=args.points_per_batch,
            device=args.device,
        )
    except ValidationError as e:
        logger.error(f"Invalid extraction configuration: {str(e)}")
        return 2

    try:
        logger.info(f"Starting extraction of {len(args.images)} image(s)...")
        extract_container(args.images, args.out, config, args.first_image_id)
    except LrsegError as e:
        logger.error(f"Extraction failed: {type(e).__name__}: {str(e)}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
