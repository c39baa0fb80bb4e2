"""
Score-map blob: one JSON header line followed by H x W float32 little-endian scores.
Coverage travels as a second H x W uint8 plane so uncovered pixels survive a round trip.
"""
import json
from pathlib import Path
from typing import Union
import numpy as np
from core.exceptions import BadFormat, TruncatedFile
from schemas.pipeline import PixelScoreMap

_SCORE_DTYPE = np.dtype("<f4")


def encode_score_map(score_map: PixelScoreMap) -> bytes:
    height, width = score_map.scores.shape
    header = {"format": "lrseg-scores", "height": height, "width": width, "dtype": "<f4", "floor": score_map.floor}
    line = json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n"
    scores = score_map.scores.astype(_SCORE_DTYPE).tobytes(order="C")
    covered = score_map.covered.astype(np.uint8).tobytes(order="C")
    return line + scores + covered


def decode_score_map(data: bytes) -> PixelScoreMap:
    newline = data.find(b"\n")
    if newline < 0:
        raise BadFormat("Score map is missing its JSON header line")
    try:
        header = json.loads(data[:newline].decode("utf-8"))
        height, width, floor = int(header["height"]), int(header["width"]), float(header["floor"])
    except (ValueError, KeyError, TypeError) as e:
        raise BadFormat(f"Malformed score map header: {str(e)}")
    if header.get("format") != "lrseg-scores":
        raise BadFormat(f"Unknown score map format {header.get('format')!r}")

    count = height * width
    body = data[newline + 1:]
    needed = count * _SCORE_DTYPE.itemsize + count
    if len(body) < needed:
        raise TruncatedFile(f"Score map needs {needed} bytes after the header, found {len(body)}")
    scores = np.frombuffer(body, dtype=_SCORE_DTYPE, count=count).reshape(height, width).astype(np.float32)
    covered = np.frombuffer(body, dtype=np.uint8, count=count, offset=count * _SCORE_DTYPE.itemsize)
    return PixelScoreMap(scores=scores, covered=covered.reshape(height, width) != 0, floor=floor)


def write_score_map(path: Union[str, Path], score_map: PixelScoreMap) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_score_map(score_map))


def read_score_map(path: Union[str, Path]) -> PixelScoreMap:
    return decode_score_map(Path(path).read_bytes())
