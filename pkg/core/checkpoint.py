"""Checkpoint files: one JSON header line followed by little-endian float64 payloads.

The header lists ``names`` and ``shapes`` in payload order, the dtype tag, the
format version, the names of non-trainable buffers and a free-form ``meta``
block (run configuration, round counter, cost ledger).
"""
import json
import os
from typing import Any, Dict, Tuple

import numpy as np

from config.constants import CHECKPOINT_DTYPE, CHECKPOINT_FORMAT_VERSION
from core.params import ModelParams
from utils.errors import DataError
from utils.logging_config import get_logger

logger = get_logger(__name__)


def save_checkpoint(path: str, params: ModelParams, meta: Dict[str, Any]) -> None:
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "dtype": CHECKPOINT_DTYPE,
        "names": list(params.names),
        "shapes": [list(params[name].shape) for name in params.names],
        "buffers": sorted(params.buffers),
        "meta": meta,
    }
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        for name in params.names:
            f.write(np.ascontiguousarray(params[name], dtype=CHECKPOINT_DTYPE).tobytes())
    logger.info("Checkpoint written: %s (%d tensors, %d scalars)", path, len(params.names), params.total_size)


def load_checkpoint(path: str) -> Tuple[ModelParams, Dict[str, Any]]:
    try:
        with open(path, "rb") as f:
            header_line = f.readline()
            payload = f.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"checkpoint {path} has a malformed header") from e
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataError(f"checkpoint {path}: unsupported format version {header.get('format_version')}")
    if header.get("dtype") != CHECKPOINT_DTYPE:
        raise DataError(f"checkpoint {path}: unsupported dtype {header.get('dtype')}")

    arrays: Dict[str, np.ndarray] = {}
    offset = 0
    itemsize = np.dtype(CHECKPOINT_DTYPE).itemsize
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape)) if shape else 1
        chunk = payload[offset:offset + count * itemsize]
        if len(chunk) != count * itemsize:
            raise DataError(f"checkpoint {path}: payload truncated at {name}")
        arrays[name] = np.frombuffer(chunk, dtype=CHECKPOINT_DTYPE).astype(np.float64).reshape(shape)
        offset += count * itemsize
    if offset != len(payload):
        raise DataError(f"checkpoint {path}: {len(payload) - offset} trailing bytes")
    logger.debug("Checkpoint loaded: %s (%d tensors)", path, len(arrays))
    return ModelParams(arrays, buffers=header.get("buffers", [])), header.get("meta", {})
