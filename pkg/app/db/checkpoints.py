"""
Checkpoint files.

Layout: a magic line, an 8-byte little-endian manifest length, the JSON
manifest (format version, hyperparameters, tickers, seed, step, array
names and shapes), then every array as raw little-endian float64 in
manifest order.
"""

import json
import logging
import os
import struct
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from app.core.exceptions import DataError
from app.db.models import CHECKPOINT_FORMAT_VERSION, Checkpoint, GanHyperParams

logger = logging.getLogger(__name__)

MAGIC = b"SCENARIO-GAN-CHECKPOINT\n"
_LENGTH = struct.Struct("<Q")


class CheckpointManifest(BaseModel):
    format_version: int
    hp: GanHyperParams
    tickers: List[str]
    seed: int
    step: int
    extra: Dict[str, str] = {}
    arrays: List[Tuple[str, List[int]]]


def dumps_checkpoint(ckpt: Checkpoint) -> bytes:
    names = list(ckpt.arrays)
    manifest = CheckpointManifest(
        format_version=ckpt.format_version,
        hp=ckpt.hp,
        tickers=list(ckpt.tickers),
        seed=ckpt.seed,
        step=ckpt.step,
        extra=dict(ckpt.extra),
        arrays=[(name, list(np.shape(ckpt.arrays[name]))) for name in names],
    )
    header = manifest.model_dump_json().encode("utf-8")
    parts = [MAGIC, _LENGTH.pack(len(header)), header]
    for name in names:
        parts.append(np.ascontiguousarray(ckpt.arrays[name], dtype="<f8").tobytes())
    return b"".join(parts)


def loads_checkpoint(data: bytes) -> Checkpoint:
    if not data.startswith(MAGIC):
        raise DataError("Not a checkpoint file (bad magic)")
    offset = len(MAGIC)
    if len(data) < offset + _LENGTH.size:
        raise DataError("Truncated checkpoint header")
    (header_length,) = _LENGTH.unpack_from(data, offset)
    offset += _LENGTH.size
    try:
        manifest = CheckpointManifest.model_validate(
            json.loads(data[offset : offset + header_length].decode("utf-8"))
        )
    except (ValueError, ValidationError) as exc:
        raise DataError(f"Corrupt checkpoint manifest: {exc}") from exc
    offset += header_length

    if manifest.format_version != CHECKPOINT_FORMAT_VERSION:
        raise DataError(
            f"Unsupported checkpoint format {manifest.format_version} "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )

    arrays: Dict[str, np.ndarray] = {}
    for name, shape in manifest.arrays:
        count = int(np.prod(shape)) if shape else 1
        size = count * 8
        if offset + size > len(data):
            raise DataError(f"Truncated checkpoint data for array {name}")
        array = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        arrays[name] = array.astype(np.float64).reshape(shape)
        offset += size
    if offset != len(data):
        raise DataError(f"{len(data) - offset} trailing bytes after checkpoint arrays")

    return Checkpoint(
        hp=manifest.hp,
        tickers=tuple(manifest.tickers),
        arrays=arrays,
        seed=manifest.seed,
        step=manifest.step,
        format_version=manifest.format_version,
        extra=dict(manifest.extra),
    )


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps_checkpoint(ckpt))
    os.replace(tmp, path)
    logger.info(f"Checkpoint at step {ckpt.step} written to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Checkpoint not found: {path}")
    ckpt = loads_checkpoint(path.read_bytes())
    logger.info(f"Loaded checkpoint {path} (step {ckpt.step}, {len(ckpt.arrays)} arrays)")
    return ckpt


def checkpoints_equal(a: Checkpoint, b: Checkpoint) -> bool:
    """Bit-level equality of two checkpoints."""
    return dumps_checkpoint(a) == dumps_checkpoint(b)
