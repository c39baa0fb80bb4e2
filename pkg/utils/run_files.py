"""
File naming inside run directories and the run-config echo.
"""
import re
from pathlib import Path
from typing import List, Union
import logging
from schemas.config import RunConfig

logger = logging.getLogger(__name__)

RUN_CONFIG_FILE = "run_config.json"
FREE_CONTAINER = "free_reference.lrsf"
OBSTACLE_CONTAINER = "obstacle_reference.lrsf"
SEGMENTS_CONTAINER = "segments.lrsf"
ROI_FILE = "roi.pgm"

_GT_PATTERN = re.compile(r"^image_(\d+)\.pgm$")
_DECISION_PATTERN = re.compile(r"^image_(\d+)_decision\.pgm$")


def gt_name(image_id: int) -> str:
    return f"image_{image_id:05d}.pgm"


def decision_name(image_id: int) -> str:
    return f"image_{image_id:05d}_decision.pgm"


def scores_name(image_id: int) -> str:
    return f"image_{image_id:05d}_scores.bin"


def decisions_name(image_id: int) -> str:
    return f"image_{image_id:05d}_decisions.jsonl"


def report_name(image_id: int) -> str:
    return f"image_{image_id:05d}_report.json"


def _ids(directory: Union[str, Path], pattern: re.Pattern) -> List[int]:
    directory = Path(directory)
    if not directory.is_dir():
        return []
    return sorted(int(m.group(1)) for m in (pattern.match(p.name) for p in directory.iterdir()) if m)


def list_gt_ids(directory: Union[str, Path]) -> List[int]:
    return _ids(directory, _GT_PATTERN)


def list_decision_ids(directory: Union[str, Path]) -> List[int]:
    return _ids(directory, _DECISION_PATTERN)


def write_run_config(directory: Union[str, Path], config: RunConfig) -> Path:
    """Echo the exact run configuration next to the outputs."""
    path = Path(directory) / RUN_CONFIG_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.model_dump_json(indent=2))
    logger.debug(f"Wrote run config to {path}")
    return path
