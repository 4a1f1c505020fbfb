"""Define the FCDD1 checkpoint file format.

Layout: the magic ``b"FCDD1"``, a little-endian uint32 header length, a UTF-8 JSON
header, then every blob's values as little-endian float64 in header order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
from pathlib import Path
import struct
from typing import Any, Union

import numpy as np

from deeper_fcdd.const import CHECKPOINT_MAGIC, LOGGER
from deeper_fcdd.errors import CheckpointError

_BLOB_DTYPE = np.dtype("<f8")
_LENGTH = struct.Struct("<I")


@dataclass
class Checkpoint:
    """Define the decoded contents of a checkpoint file."""

    blobs: dict[str, np.ndarray]
    backbone: dict[str, Any] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    """Return the byte encoding of a checkpoint."""
    header = {
        "backbone": checkpoint.backbone,
        "blobs": [
            {"name": name, "dims": list(np.shape(value))}
            for name, value in checkpoint.blobs.items()
        ],
        "meta": checkpoint.meta,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [CHECKPOINT_MAGIC, _LENGTH.pack(len(header_bytes)), header_bytes]
    parts.extend(
        np.ascontiguousarray(value, dtype=_BLOB_DTYPE).tobytes()
        for value in checkpoint.blobs.values()
    )
    return b"".join(parts)


def decode_checkpoint(payload: bytes) -> Checkpoint:
    """Return the checkpoint encoded in a byte string."""
    if not payload.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("Not an FCDD1 checkpoint (bad magic)")

    offset = len(CHECKPOINT_MAGIC)
    try:
        (header_length,) = _LENGTH.unpack_from(payload, offset)
        offset += _LENGTH.size
        header = json.loads(payload[offset : offset + header_length].decode())
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError("Checkpoint header is corrupt") from err
    offset += header_length

    try:
        entries = header["blobs"]
        backbone, meta = header["backbone"], header["meta"]
        if not isinstance(backbone, dict) or not isinstance(meta, dict):
            raise TypeError("backbone and meta must be objects")
        blobs: dict[str, np.ndarray] = {}
        for entry in entries:
            name = str(entry["name"])
            dims = tuple(int(dim) for dim in entry["dims"])
            if any(dim < 0 for dim in dims):
                raise ValueError(f"negative dims {list(dims)} for blob '{name}'")
            count = int(np.prod(dims, dtype=np.int64))
            end = offset + count * _BLOB_DTYPE.itemsize
            if end > len(payload):
                raise CheckpointError(f"Checkpoint blob '{name}' is truncated")
            blobs[name] = (
                np.frombuffer(payload[offset:end], dtype=_BLOB_DTYPE)
                .reshape(dims)
                .copy()
            )
            offset = end
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointError(f"Checkpoint header is malformed: {err}") from err

    if offset != len(payload):
        raise CheckpointError("Checkpoint has trailing bytes after its last blob")

    return Checkpoint(blobs=blobs, backbone=backbone, meta=meta)


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Write a checkpoint file and return its path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(checkpoint))
    LOGGER.debug("Wrote checkpoint %s (%d blobs)", path, len(checkpoint.blobs))
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint file."""
    try:
        payload = Path(path).read_bytes()
    except OSError as err:
        raise CheckpointError(f"Cannot read checkpoint {path}") from err
    return decode_checkpoint(payload)
