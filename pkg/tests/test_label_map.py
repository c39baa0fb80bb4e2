import numpy as np
import pytest
from core.exceptions import BadFormat, IllegalLabelValue, TruncatedFile
from schemas.pipeline import PixelScoreMap
from schemas.segment import LabelMap
from utils.label_map import decode_pgm, encode_pgm, read_label_map, read_mask, write_label_map
from utils.score_map import decode_score_map, encode_score_map, read_score_map, write_score_map


def reference_pgm(pixels: np.ndarray) -> bytes:
    height, width = pixels.shape
    return b"P5 %d %d 255\n" % (width, height) + pixels.astype(np.uint8).tobytes()


def test_zeros_read_as_all_free(tmp_path):
    path = tmp_path / "gt.pgm"
    path.write_bytes(reference_pgm(np.zeros((2, 2))))
    label_map = read_label_map(path)
    assert label_map.height == 2 and label_map.width == 2
    assert not label_map.positive.any() and not label_map.ignore.any()


def test_illegal_value(tmp_path):
    path = tmp_path / "gt.pgm"
    path.write_bytes(reference_pgm(np.array([[0, 7]])))
    with pytest.raises(IllegalLabelValue):
        read_label_map(path)


def test_mixed_values_round_trip(tmp_path, rng):
    pixels = rng.choice(np.array([0, 1, 255], dtype=np.uint8), size=(7, 11))
    path = tmp_path / "gt.pgm"
    path.write_bytes(reference_pgm(pixels))
    label_map = read_label_map(path)
    assert np.array_equal(label_map.pixels, pixels)
    write_label_map(tmp_path / "copy.pgm", label_map)
    assert read_label_map(tmp_path / "copy.pgm") == label_map


def test_header_comments_are_skipped():
    data = b"P5\n# written by hand\n3 1\n255\n" + bytes([0, 1, 255])
    assert decode_pgm(data).tolist() == [[0, 1, 255]]


@pytest.mark.parametrize("data", [
    b"P2\n1 1\n255\n0",
    b"P5\n1 1\n65535\n\x00\x00",
    b"P5\n2 2\n255\n\x00",
    b"P5\nx 2\n255\n\x00",
])
def test_bad_pgm(data):
    with pytest.raises(BadFormat):
        decode_pgm(data)


def test_read_mask_is_nonzero(tmp_path):
    path = tmp_path / "roi.pgm"
    path.write_bytes(encode_pgm(np.array([[0, 3], [255, 0]])))
    assert read_mask(path).tolist() == [[False, True], [True, False]]


def test_score_map_round_trip(tmp_path):
    covered = np.array([[True, False], [True, True]])
    scores = np.where(covered, np.array([[1.5, 0.0], [-2.25, 40.0]]), -50.0).astype(np.float32)
    score_map = PixelScoreMap(scores=scores, covered=covered, floor=-50.0)
    write_score_map(tmp_path / "s.bin", score_map)
    restored = read_score_map(tmp_path / "s.bin")
    assert np.array_equal(restored.scores, scores)
    assert np.array_equal(restored.covered, covered)
    assert restored.floor == -50.0
    assert encode_score_map(restored) == encode_score_map(score_map)


def test_score_map_truncated():
    score_map = PixelScoreMap(scores=np.zeros((2, 2), dtype=np.float32), covered=np.ones((2, 2), dtype=bool))
    with pytest.raises(TruncatedFile):
        decode_score_map(encode_score_map(score_map)[:-1])


def test_uncovered_pixels_must_hold_the_floor():
    with pytest.raises(ValueError):
        PixelScoreMap(scores=np.zeros((1, 2), dtype=np.float32), covered=np.array([[True, False]]), floor=-50.0)


def test_label_map_rejects_non_raster():
    with pytest.raises(ValueError):
        LabelMap(pixels=np.zeros(4))
