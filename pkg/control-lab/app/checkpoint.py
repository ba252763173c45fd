"""Versioned network checkpoint files (see docs/checkpoint-format.md)."""

import json
from pathlib import Path
from typing import List

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from shared.logging_config import get_logger
from app.errors import CheckpointFormatError
from app.mlp import MlpNetwork

logger = get_logger(__name__)

MAGIC = b"RCLNET\n"
FORMAT_VERSION = 1
DTYPE = "<f8"


class CheckpointHeader(BaseModel):
    format: str = Field("rcl-mlp", description="Fixed format tag")
    version: int = FORMAT_VERSION
    dtype: str = DTYPE
    order: str = "C"
    layer_sizes: List[int]
    zeta: float = Field(..., gt=0)


def save_network(net: MlpNetwork, path: str) -> None:
    """Write layer sizes, zeta and all weights (row-major, little-endian float64)"""
    header = CheckpointHeader(layer_sizes=net.layer_sizes, zeta=net.zeta)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header.model_dump()).encode("utf-8") + b"\n")
        for w in net.weights:
            f.write(np.ascontiguousarray(w, dtype=DTYPE).tobytes(order="C"))
    logger.info("network_checkpoint_saved", path=str(target), layer_sizes=net.layer_sizes)


def load_network(path: str) -> MlpNetwork:
    """Read a checkpoint written by save_network; momentum buffers start at zero"""
    with open(Path(path), "rb") as f:
        if f.readline() != MAGIC:
            raise CheckpointFormatError(f"{path}: not a network checkpoint")
        try:
            header = CheckpointHeader.model_validate(json.loads(f.readline().decode("utf-8")))
        except (ValueError, ValidationError) as e:
            raise CheckpointFormatError(f"{path}: unreadable header: {e}") from e
        payload = f.read()

    if header.version != FORMAT_VERSION or header.dtype != DTYPE or header.order != "C":
        raise CheckpointFormatError(
            f"{path}: unsupported checkpoint version={header.version} dtype={header.dtype} order={header.order}"
        )
    shapes = [(n_out, n_in) for n_in, n_out in zip(header.layer_sizes[:-1], header.layer_sizes[1:])]
    expected = sum(r * c for r, c in shapes) * np.dtype(DTYPE).itemsize
    if len(payload) != expected:
        raise CheckpointFormatError(f"{path}: expected {expected} weight bytes, found {len(payload)}")

    flat = np.frombuffer(payload, dtype=DTYPE)
    weights, offset = [], 0
    for rows, cols in shapes:
        weights.append(flat[offset : offset + rows * cols].reshape(rows, cols).astype(np.float64))
        offset += rows * cols
    return MlpNetwork(
        layer_sizes=list(header.layer_sizes),
        weights=weights,
        momentum_buffers=[np.zeros_like(w) for w in weights],
        zeta=header.zeta,
        sn_vectors=[None] * len(weights),
    )
