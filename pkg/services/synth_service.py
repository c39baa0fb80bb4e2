"""
Seeded synthetic data: two-distribution reference sets and road scenes with
planted obstacles, written in the same formats real data uses.
"""
from pathlib import Path
from typing import List, Optional, Tuple, Union
import logging
import numpy as np
from sklearn.datasets import make_blobs, make_circles, make_moons
from core.exceptions import UnknownScenario
from schemas.config import RunConfig, SynthConfig
from schemas.enums import LabelValue, Scenario
from schemas.segment import LabelMap, RleMask, SegmentRecord
from utils.container import header_for, write_feature_container
from utils.label_map import encode_pgm, write_label_map
from utils.rle import rle_encode
from utils.run_files import (
    FREE_CONTAINER,
    OBSTACLE_CONTAINER,
    ROI_FILE,
    SEGMENTS_CONTAINER,
    gt_name,
    write_run_config,
)
from utils.seeding import spawn_generators

logger = logging.getLogger(__name__)

TILE_HEIGHT = 12
TILE_WIDTH = 16
EXTRA_DIM_NOISE = 0.1


def _scenario(value) -> Scenario:
    if isinstance(value, Scenario):
        return value
    if not Scenario.is_valid(str(value)):
        raise UnknownScenario(f"Unknown scenario {value!r}; expected one of {Scenario.get_all_values()}")
    return Scenario(value)


def sample_scenario(
    scenario: Scenario,
    n: int,
    dim: int,
    rng: np.random.Generator,
    separation: float = 10.0,
    offset: float = 20.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw n free-space and n obstacle feature vectors.

    blobs: unit-variance Gaussians at (offset, 0, ...) and (offset, separation, 0, ...).
    moons / rings: the two classes of the 2-D toy sets, scaled and shifted by
    ``offset`` along the first axis; remaining dims carry small Gaussian noise.
    """
    scenario = _scenario(scenario)
    random_state = int(rng.integers(0, 2 ** 31 - 1))
    if scenario == Scenario.BLOBS:
        centers = np.zeros((2, dim))
        centers[:, 0] = offset
        centers[1, 1] = separation
        x, y = make_blobs(n_samples=[n, n], n_features=dim, centers=centers, cluster_std=1.0, random_state=random_state)
    else:
        if scenario == Scenario.MOONS:
            plane, y = make_moons(n_samples=2 * n, noise=0.1, random_state=random_state)
            plane = plane * (separation / 2.0)
        else:
            # outer ring is free space, inner ring obstacles
            plane, y = make_circles(n_samples=2 * n, noise=0.05, factor=0.5, random_state=random_state)
            plane = plane * separation
        plane[:, 0] += offset
        x = np.concatenate([plane, rng.normal(0.0, EXTRA_DIM_NOISE, size=(2 * n, dim - 2))], axis=1)
    free = x[y == 0][:n]
    obstacle = x[y == 1][:n]
    return free.astype(np.float32), obstacle.astype(np.float32)


def _reference_records(features: np.ndarray) -> List[SegmentRecord]:
    mask = RleMask(height=1, width=1, counts=(0, 1))
    return [
        SegmentRecord(
            image_id=0,
            segment_id=i,
            feature=row,
            mask=mask,
            predicted_iou=1.0,
            stability_score=1.0,
            prompt_xy=(0, 0),
        )
        for i, row in enumerate(features)
    ]


def _prompt(mask: np.ndarray) -> Tuple[int, int]:
    ys, xs = np.nonzero(mask)
    return int(np.round(xs.mean())), int(np.round(ys.mean()))


def _quality(rng: np.random.Generator) -> Tuple[float, float]:
    return round(float(rng.uniform(0.90, 1.0)), 6), round(float(rng.uniform(0.92, 1.0)), 6)


def synth_scene(
    image_id: int,
    config: SynthConfig,
    rng: np.random.Generator,
) -> Tuple[List[SegmentRecord], LabelMap, np.ndarray]:
    """
    One road scene.

    Above the horizon is sky (ground truth ignore, outside the ROI). Below it
    the road is tiled into free-space segments; each planted obstacle is a
    rectangle with an obstacle feature. Every scene also carries a
    low-quality segment, a lower-scored duplicate of an obstacle mask and a
    sky segment, all of which filtering must remove.

    Returns:
        (records, ground truth, roi)
    """
    height, width = config.height, config.width
    horizon = height // 4
    roi = np.zeros((height, width), dtype=bool)
    roi[horizon:, :] = True

    obstacle_masks = []
    for _ in range(config.obstacles_per_image):
        oh = int(rng.integers(5, 11))
        ow = int(rng.integers(5, 13))
        top = int(rng.integers(horizon + 2, height - oh - 1))
        left = int(rng.integers(1, width - ow - 1))
        mask = np.zeros((height, width), dtype=bool)
        mask[top:top + oh, left:left + ow] = True
        obstacle_masks.append(mask)
    obstacle_union = np.zeros((height, width), dtype=bool)
    for mask in obstacle_masks:
        obstacle_union |= mask

    road_masks = []
    for top in range(horizon, height, TILE_HEIGHT):
        for left in range(0, width, TILE_WIDTH):
            mask = np.zeros((height, width), dtype=bool)
            mask[top:top + TILE_HEIGHT, left:left + TILE_WIDTH] = True
            mask &= ~obstacle_union
            if mask.any():
                road_masks.append(mask)
    sky = np.zeros((height, width), dtype=bool)
    sky[:horizon, :] = True

    n_free = len(road_masks) + 1
    n_obstacle = len(obstacle_masks) * 2 + 1
    free_features, obstacle_features = sample_scenario(
        config.scenario, max(n_free, n_obstacle), config.dim, rng, config.separation, config.offset
    )

    records: List[SegmentRecord] = []

    def add(mask: np.ndarray, feature: np.ndarray, iou: float, stability: float) -> None:
        records.append(SegmentRecord(
            image_id=image_id,
            segment_id=len(records),
            feature=feature,
            mask=rle_encode(mask),
            predicted_iou=iou,
            stability_score=stability,
            prompt_xy=_prompt(mask),
        ))

    for i, mask in enumerate(road_masks):
        add(mask, free_features[i], *_quality(rng))
    add(sky, free_features[len(road_masks)], *_quality(rng))
    for i, mask in enumerate(obstacle_masks):
        iou, stability = _quality(rng)
        iou = max(iou, 0.95)
        add(mask, obstacle_features[2 * i], iou, stability)
        # near-identical duplicate with a lower predicted IoU
        add(mask, obstacle_features[2 * i + 1], round(iou - 0.03, 6), stability)
    if road_masks:
        # low-quality segment spanning a road tile, scored like an obstacle
        add(road_masks[0], obstacle_features[-1], 0.5, 0.5)

    gt = np.full((height, width), LabelValue.FREE.value, dtype=np.uint8)
    gt[obstacle_union] = LabelValue.OBSTACLE.value
    gt[:horizon, :] = LabelValue.IGNORE.value
    return records, LabelMap(pixels=gt), roi


class SynthService:
    @staticmethod
    def cmd_synth(
        scenario: Union[str, Scenario],
        seed: int,
        out_dir: Union[str, Path],
        config: Optional[SynthConfig] = None,
        run_config: Optional[RunConfig] = None,
    ) -> Path:
        """
        Write free/obstacle reference containers, a segments container,
        ground-truth label maps, the ROI raster and the run config.

        Raises:
            UnknownScenario: scenario not in {blobs, rings, moons}
        """
        scenario = _scenario(scenario)
        config = (config or SynthConfig()).model_copy(update={"scenario": scenario, "seed": seed})
        out_dir = Path(out_dir)
        # child 0 draws the references, child i + 1 draws scene i
        reference_rng, *scene_rngs = spawn_generators(seed, 1 + config.n_images)

        free, obstacle = sample_scenario(scenario, config.n_reference, config.dim, reference_rng, config.separation, config.offset)
        for name, features in ((FREE_CONTAINER, free), (OBSTACLE_CONTAINER, obstacle)):
            records = _reference_records(features)
            write_feature_container(out_dir / name, header_for(records, config.dim, 1, 1), records)

        segments: List[SegmentRecord] = []
        gt_dir = out_dir / "gt"
        roi = None
        for image_id, scene_rng in enumerate(scene_rngs):
            records, gt, roi = synth_scene(image_id, config, scene_rng)
            segments.extend(records)
            write_label_map(gt_dir / gt_name(image_id), gt)
        write_feature_container(
            out_dir / SEGMENTS_CONTAINER,
            header_for(segments, config.dim, config.height, config.width),
            segments,
        )
        (out_dir / ROI_FILE).write_bytes(encode_pgm(roi.astype(np.uint8)))

        if run_config is None:
            run_config = RunConfig(command="synth", seed=seed, synth=config)
        write_run_config(out_dir, run_config)
        logger.info(
            f"Synthesized {scenario.value} data in {out_dir}: {config.n_reference} references per class, "
            f"{config.n_images} scenes, {len(segments)} segments, C={config.dim}"
        )
        return out_dir
