import re
import logging
from pathlib import Path
from typing import Union
import numpy as np
from core.exceptions import BadFormat
from schemas.segment import LabelMap

logger = logging.getLogger(__name__)

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _next_token(data: bytes, pos: int):
    match = _PGM_TOKEN.match(data, pos)
    if not match:
        raise BadFormat("Unexpected end of PGM header")
    return match.group(1), match.end()


def decode_pgm(data: bytes) -> np.ndarray:
    """Decode a binary (P5) PGM with maxval 255 into a uint8 raster."""
    magic, pos = _next_token(data, 0)
    if magic != b"P5":
        raise BadFormat(f"Expected binary PGM magic P5, got {magic[:8]!r}")
    fields = []
    for _ in range(3):
        token, pos = _next_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise BadFormat(f"Non-numeric PGM header field {token[:16]!r}")
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise BadFormat(f"Invalid PGM dimensions {width}x{height}")
    if maxval != 255:
        raise BadFormat(f"Only maxval 255 is supported, got {maxval}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise BadFormat("Missing whitespace after PGM maxval")
    pos += 1
    expected = width * height
    body = data[pos:]
    if len(body) < expected:
        raise BadFormat(f"PGM raster needs {expected} bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8, count=expected).reshape(height, width).copy()


def encode_pgm(pixels: np.ndarray) -> bytes:
    raster = np.asarray(pixels)
    if raster.ndim != 2:
        raise BadFormat(f"PGM rasters must be 2-D, got shape {raster.shape}")
    height, width = raster.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + raster.astype(np.uint8).tobytes(order="C")


def read_label_map(path: Union[str, Path]) -> LabelMap:
    """
    Read a ground-truth or decision label map.

    Raises:
        BadFormat: not a binary PGM with maxval 255
        IllegalLabelValue: a pixel outside {0, 1, 255}
    """
    pixels = decode_pgm(Path(path).read_bytes())
    return LabelMap.from_array(pixels)


def write_label_map(path: Union[str, Path], label_map: LabelMap) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pgm(label_map.pixels))
    logger.debug(f"Wrote {label_map.height}x{label_map.width} label map to {path}")


def read_mask(path: Union[str, Path]) -> np.ndarray:
    """Read a PGM as a boolean raster (non-zero = inside), e.g. a region of interest."""
    return decode_pgm(Path(path).read_bytes()) != 0
