"""
Feature container codec.

Layout (all integers little-endian):
    magic "LRSF0001" | u32 record_count | u32 C | u32 H | u32 W
    | record_count x C float32 features
    | "\\n" | record_count JSON metadata lines, one object per record, same order
"""
import json
import struct
import logging
from pathlib import Path
from typing import List, Tuple, Union
import numpy as np
from pydantic import ValidationError
from core.exceptions import BadMagic, DimMismatch, TruncatedFile, MalformedMetadata
from schemas.segment import ContainerHeader, SegmentRecord, RleMask

logger = logging.getLogger(__name__)

MAGIC = b"LRSF0001"
_HEADER = struct.Struct("<8sIIII")
_FEATURE_DTYPE = np.dtype("<f4")
_METADATA_KEYS = ("image_id", "segment_id", "rle", "predicted_iou", "stability_score", "prompt_xy")


def encode_feature_container(header: ContainerHeader, records: List[SegmentRecord]) -> bytes:
    """Serialize a header and its records to container bytes."""
    if header.record_count != len(records):
        raise DimMismatch(f"Header declares {header.record_count} records, got {len(records)}")

    seen = set()
    for record in records:
        if record.feature.shape[0] != header.dim:
            raise DimMismatch(
                f"Record {record.key} has dimensionality {record.feature.shape[0]}, header declares {header.dim}"
            )
        if (record.mask.height, record.mask.width) != (header.height, header.width):
            raise DimMismatch(
                f"Record {record.key} mask is {record.mask.height}x{record.mask.width}, "
                f"header declares {header.height}x{header.width}"
            )
        if record.key in seen:
            raise MalformedMetadata(f"Duplicate (image_id, segment_id) {record.key}")
        seen.add(record.key)

    parts = [_HEADER.pack(MAGIC, header.record_count, header.dim, header.height, header.width)]
    if records:
        features = np.stack([record.feature for record in records]).astype(_FEATURE_DTYPE)
        parts.append(features.tobytes(order="C"))
        parts.append(b"\n")
        for record in records:
            line = json.dumps(record.metadata(), separators=(",", ":"))
            parts.append(line.encode("utf-8") + b"\n")
    return b"".join(parts)


def decode_feature_container(data: bytes) -> Tuple[ContainerHeader, List[SegmentRecord]]:
    """Parse container bytes; records come back in file order."""
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise BadMagic(f"Missing container magic {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"Container header needs {_HEADER.size} bytes, file has {len(data)}")

    _, record_count, dim, height, width = _HEADER.unpack_from(data, 0)
    if dim == 0:
        raise DimMismatch("Container declares zero-length feature vectors")
    if height == 0 or width == 0:
        raise MalformedMetadata(f"Container declares empty image dimensions {height}x{width}")
    header = ContainerHeader(record_count=record_count, dim=dim, height=height, width=width)

    blob_size = record_count * dim * _FEATURE_DTYPE.itemsize
    blob_end = _HEADER.size + blob_size
    if len(data) < blob_end:
        raise TruncatedFile(
            f"Feature blob needs {blob_size} bytes, only {len(data) - _HEADER.size} present"
        )
    if record_count == 0:
        if data[blob_end:] not in (b"", b"\n"):
            raise MalformedMetadata("Unexpected trailing bytes after an empty container header")
        return header, []

    features = np.frombuffer(data, dtype=_FEATURE_DTYPE, count=record_count * dim, offset=_HEADER.size)
    features = features.reshape(record_count, dim).astype(np.float32)

    tail = data[blob_end:]
    if not tail:
        raise TruncatedFile("Container ends before the metadata section")
    if tail[:1] != b"\n":
        raise MalformedMetadata("Feature blob is not followed by a newline separator")
    lines = tail[1:].split(b"\n")
    if lines and lines[-1] == b"":
        lines = lines[:-1]
    if len(lines) < record_count:
        raise TruncatedFile(f"Expected {record_count} metadata lines, found {len(lines)}")
    if len(lines) > record_count:
        raise MalformedMetadata(f"Expected {record_count} metadata lines, found {len(lines)}")

    records = []
    seen = set()
    for index, line in enumerate(lines):
        record = _parse_record(line, features[index], header, index)
        if record.key in seen:
            raise MalformedMetadata(f"Duplicate (image_id, segment_id) {record.key}")
        seen.add(record.key)
        records.append(record)
    return header, records


def _parse_record(line: bytes, feature: np.ndarray, header: ContainerHeader, index: int) -> SegmentRecord:
    try:
        meta = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedMetadata(f"Metadata line {index} is not valid JSON: {str(e)}")
    if not isinstance(meta, dict):
        raise MalformedMetadata(f"Metadata line {index} is not a JSON object")
    missing = [key for key in _METADATA_KEYS if key not in meta]
    if missing:
        raise MalformedMetadata(f"Metadata line {index} is missing keys {missing}")

    try:
        mask = RleMask(height=header.height, width=header.width, counts=tuple(meta["rle"]))
        if sum(mask.counts) != header.height * header.width:
            raise MalformedMetadata(
                f"Metadata line {index}: RLE covers {sum(mask.counts)} pixels, image has {header.height * header.width}"
            )
        return SegmentRecord(
            image_id=meta["image_id"],
            segment_id=meta["segment_id"],
            feature=feature,
            mask=mask,
            predicted_iou=meta["predicted_iou"],
            stability_score=meta["stability_score"],
            prompt_xy=tuple(meta["prompt_xy"]),
            tap_point=meta.get("tap_point"),
        )
    except (ValidationError, TypeError) as e:
        raise MalformedMetadata(f"Metadata line {index} failed validation: {str(e)}")


def write_feature_container(path: Union[str, Path], header: ContainerHeader, records: List[SegmentRecord]) -> bytes:
    """Write a container file and return the bytes written."""
    data = encode_feature_container(header, records)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        logger.error(f"Failed to write feature container {path}: {str(e)}")
        raise
    logger.info(f"Wrote {len(records)} records ({header.dim}-d, {header.height}x{header.width}) to {path}")
    return data


def read_feature_container(path: Union[str, Path]) -> Tuple[ContainerHeader, List[SegmentRecord]]:
    """Read a container file; raises BadMagic, DimMismatch, TruncatedFile or MalformedMetadata."""
    path = Path(path)
    data = path.read_bytes()
    header, records = decode_feature_container(data)
    logger.info(f"Read {len(records)} records ({header.dim}-d, {header.height}x{header.width}) from {path}")
    return header, records


def header_for(records: List[SegmentRecord], dim: int, height: int, width: int) -> ContainerHeader:
    return ContainerHeader(record_count=len(records), dim=dim, height=height, width=width)
