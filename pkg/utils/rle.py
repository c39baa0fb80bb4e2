import numpy as np
from core.exceptions import LengthMismatch, ShapeMismatch
from schemas.segment import RleMask


def rle_encode(mask: np.ndarray) -> RleMask:
    """
    Encode a binary raster as alternating run lengths over a row-major scan.

    The first count is always the run of leading zeros (possibly 0).

    Args:
        mask: H x W array, any non-zero value counts as foreground

    Returns:
        RleMask: the encoded mask
    """
    raster = np.asarray(mask)
    if raster.ndim != 2 or raster.shape[0] < 1 or raster.shape[1] < 1:
        raise ShapeMismatch(f"Expected a non-empty H x W raster, got shape {raster.shape}")
    height, width = raster.shape
    flat = (raster.reshape(-1) != 0).astype(np.int8)

    # positions where the value changes, padded so the scan starts on a zero run
    padded = np.concatenate([[0], flat, [1 - flat[-1]]])
    changes = np.flatnonzero(padded[1:] != padded[:-1]) + 1
    boundaries = np.concatenate([[1], changes])
    counts = np.diff(boundaries)
    return RleMask(height=height, width=width, counts=tuple(int(c) for c in counts))


def rle_decode(rle: RleMask) -> np.ndarray:
    """Decode an RleMask into a boolean H x W raster."""
    total = int(sum(rle.counts))
    expected = rle.height * rle.width
    if total != expected:
        raise LengthMismatch(f"RLE counts sum to {total}, expected {expected} ({rle.height}x{rle.width})")
    values = np.arange(len(rle.counts)) % 2 == 1
    flat = np.repeat(values, rle.counts)
    return flat.reshape(rle.height, rle.width)
