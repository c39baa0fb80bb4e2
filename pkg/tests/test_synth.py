import numpy as np
import pytest
from core.exceptions import UnknownScenario
from schemas.config import SynthConfig
from schemas.enums import LabelValue, Scenario
from services.synth_service import SynthService, sample_scenario, synth_scene
from utils.container import read_feature_container
from utils.label_map import read_label_map, read_mask
from utils.rle import rle_decode
from utils.run_files import FREE_CONTAINER, OBSTACLE_CONTAINER, ROI_FILE, SEGMENTS_CONTAINER, gt_name


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("scenario", Scenario.get_all_values())
def test_sample_shapes(scenario):
    free, obstacle = sample_scenario(Scenario(scenario), 40, 5, np.random.default_rng(0))
    assert free.shape == (40, 5) and obstacle.shape == (40, 5)
    assert free.dtype == np.float32


def test_blobs_are_centred_where_configured():
    free, obstacle = sample_scenario(Scenario.BLOBS, 2000, 3, np.random.default_rng(0), separation=10.0, offset=20.0)
    assert np.allclose(free.mean(axis=0), [20.0, 0.0, 0.0], atol=0.1)
    assert np.allclose(obstacle.mean(axis=0), [20.0, 10.0, 0.0], atol=0.1)


def test_unknown_scenario(tmp_path):
    with pytest.raises(UnknownScenario):
        SynthService.cmd_synth("spirals", 0, tmp_path)


def test_same_seed_gives_identical_files(tmp_path):
    config = SynthConfig(n_reference=50, n_images=2)
    SynthService.cmd_synth("blobs", 7, tmp_path / "a", config)
    SynthService.cmd_synth("blobs", 7, tmp_path / "b", config)
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_different_seeds_differ(tmp_path):
    config = SynthConfig(n_reference=50, n_images=1)
    SynthService.cmd_synth("moons", 1, tmp_path / "a", config)
    SynthService.cmd_synth("moons", 2, tmp_path / "b", config)
    assert (tmp_path / "a" / FREE_CONTAINER).read_bytes() != (tmp_path / "b" / FREE_CONTAINER).read_bytes()


def test_scenes_do_not_depend_on_the_image_count(tmp_path):
    SynthService.cmd_synth("blobs", 5, tmp_path / "two", SynthConfig(n_reference=40, n_images=2))
    SynthService.cmd_synth("blobs", 5, tmp_path / "three", SynthConfig(n_reference=40, n_images=3))
    for name in (FREE_CONTAINER, OBSTACLE_CONTAINER, "gt/" + gt_name(0), "gt/" + gt_name(1)):
        assert (tmp_path / "two" / name).read_bytes() == (tmp_path / "three" / name).read_bytes()


def test_written_layout(tmp_path):
    config = SynthConfig(n_reference=30, n_images=3, dim=4)
    SynthService.cmd_synth("rings", 3, tmp_path, config)
    header, references = read_feature_container(tmp_path / FREE_CONTAINER)
    assert header.dim == 4 and len(references) == 30
    _, obstacles = read_feature_container(tmp_path / OBSTACLE_CONTAINER)
    assert len(obstacles) == 30
    header, segments = read_feature_container(tmp_path / SEGMENTS_CONTAINER)
    assert (header.height, header.width) == (config.height, config.width)
    assert sorted({r.image_id for r in segments}) == [0, 1, 2]
    roi = read_mask(tmp_path / ROI_FILE)
    assert roi.shape == (config.height, config.width)
    for image_id in range(3):
        gt = read_label_map(tmp_path / "gt" / gt_name(image_id))
        assert np.all(gt.ignore[~roi])


def test_scene_ground_truth_matches_planted_obstacles():
    config = SynthConfig(obstacles_per_image=2)
    records, gt, roi = synth_scene(0, config, np.random.default_rng(5))
    obstacle_union = np.zeros((config.height, config.width), dtype=bool)
    for record in records:
        mask = rle_decode(record.mask)
        if np.all(gt.pixels[mask] == LabelValue.OBSTACLE.value):
            obstacle_union |= mask
    assert np.array_equal(obstacle_union, gt.positive)
    assert {r.segment_id for r in records} == set(range(len(records)))
