"""Checkpoint container: magic, version, JSON header, raw tensor blocks."""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from disn.config import ModelConfig
from disn.core.framework import Framework
from disn.core.optim import AdamState, HistoryRow
from disn.exceptions import (
    ArtifactError,
    CheckpointError,
    CheckpointVersionError,
    ConfigMismatchError,
    CorruptTensorError,
    MissingTensorError,
)

logger = logging.getLogger(__name__)

MAGIC = b"DISN"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sII")


@dataclass
class Checkpoint:
    """Everything needed to evaluate or resume a run."""

    framework: Framework
    main_state: AdamState
    adversary_state: AdamState
    epoch: int
    rng_state: dict[str, Any]
    history: list[HistoryRow] = field(default_factory=list)
    speakers: list[str] = field(default_factory=list)
    fingerprint: str | None = None


def _tensors(framework: Framework) -> list[tuple[str, np.ndarray]]:
    tensors = []
    for name, param in framework.named_params():
        tensors += [(name, param.value), (f"{name}.m1", param.m1), (f"{name}.m2", param.m2)]
    tensors += list(framework.named_buffers())
    return tensors


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    """Serialize a checkpoint; identical state always gives identical bytes."""
    framework = checkpoint.framework
    dtype = np.dtype(framework.dtype).newbyteorder("<")
    manifest = []
    blocks = []
    offset = 0
    for name, array in _tensors(framework):
        raw = np.ascontiguousarray(array, dtype=dtype).tobytes()
        manifest.append(
            {
                "name": name,
                "shape": list(array.shape),
                "dtype": dtype.str,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blocks.append(raw)
        offset += len(raw)

    header = {
        "model": framework.config.model_dump(mode="json"),
        "n_speakers": framework.n_speakers,
        "speakers": checkpoint.speakers,
        "precision": framework.dtype,
        "epoch": checkpoint.epoch,
        "adam": {
            "main": checkpoint.main_state.to_dict(),
            "adversary": checkpoint.adversary_state.to_dict(),
        },
        "rng_state": checkpoint.rng_state,
        "history": [row.to_list() for row in checkpoint.history],
        "fingerprint": checkpoint.fingerprint,
        "tensors": manifest,
    }
    raw_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(raw_header)) + raw_header + b"".join(blocks)


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> None:
    """Write a checkpoint atomically (temp file then rename).

    Raises:
        ArtifactError: If the file cannot be written.
    """
    payload = encode_checkpoint(checkpoint)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as e:
        raise ArtifactError(f"Could not write checkpoint {path}: {e}") from e
    logger.debug(
        "Wrote checkpoint for epoch %d to %s (%d bytes)", checkpoint.epoch, path, len(payload)
    )


def _read_header(data: bytes) -> tuple[dict[str, Any], int]:
    if len(data) < _PREAMBLE.size:
        raise CheckpointError(f"File too short for a checkpoint ({len(data)} bytes)")
    magic, version, header_length = _PREAMBLE.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"Checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    start = _PREAMBLE.size + header_length
    if start > len(data):
        raise CheckpointError("Checkpoint header is truncated")
    try:
        header = json.loads(data[_PREAMBLE.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Checkpoint header is not valid JSON: {e}") from e
    return header, start


def _read_tensor(
    data: bytes, start: int, entry: dict[str, Any], expected: np.ndarray
) -> np.ndarray:
    name = entry["name"]
    shape = tuple(entry["shape"])
    if shape != expected.shape:
        raise CorruptTensorError(f"Tensor {name} has shape {shape}, model expects {expected.shape}")
    dtype = np.dtype(entry["dtype"])
    nbytes = entry["nbytes"]
    if nbytes != math.prod(shape) * dtype.itemsize:
        raise CorruptTensorError(f"Tensor {name} declares {nbytes} bytes for shape {shape}")
    offset = start + entry["offset"]
    if entry["offset"] < 0 or offset + nbytes > len(data):
        raise CorruptTensorError(f"Tensor {name} block lies outside the file")
    values = np.frombuffer(data, dtype=dtype, count=math.prod(shape), offset=offset).reshape(shape)
    if not np.all(np.isfinite(values)):
        raise CorruptTensorError(f"Tensor {name} contains non-finite values")
    return values


def decode_checkpoint(data: bytes, model_config: ModelConfig | None = None) -> Checkpoint:
    """Parse checkpoint bytes into a framework and optimizer state.

    Args:
        data: File contents.
        model_config: Model configuration the caller requires, if any.

    Returns:
        Checkpoint with every tensor restored.

    Raises:
        CheckpointVersionError: Unsupported format version.
        ConfigMismatchError: Stored model configuration differs from model_config.
        MissingTensorError: A model tensor is absent.
        CorruptTensorError: A tensor block is inconsistent with its manifest entry.
    """
    header, start = _read_header(data)
    try:
        stored = ModelConfig.model_validate(header["model"])
        framework = Framework(
            stored, int(header["n_speakers"]), np.random.default_rng(0), header["precision"]
        )
        entries = {entry["name"]: entry for entry in header["tensors"]}
        main_state = AdamState.from_dict(header["adam"]["main"])
        adversary_state = AdamState.from_dict(header["adam"]["adversary"])
    except (KeyError, TypeError, ValidationError) as e:
        raise CheckpointError(f"Checkpoint header is incomplete: {e}") from e
    if model_config is not None and stored != model_config:
        raise ConfigMismatchError(
            f"Checkpoint model config {stored.model_dump()} "
            f"differs from requested {model_config.model_dump()}"
        )

    for name, target in _tensors(framework):
        entry = entries.get(name)
        if entry is None:
            raise MissingTensorError(f"Checkpoint has no tensor {name}")
        target[...] = _read_tensor(data, start, entry, target)

    return Checkpoint(
        framework=framework,
        main_state=main_state,
        adversary_state=adversary_state,
        epoch=int(header["epoch"]),
        rng_state=header["rng_state"],
        history=[HistoryRow.from_list(row) for row in header.get("history", [])],
        speakers=list(header.get("speakers", [])),
        fingerprint=header.get("fingerprint"),
    )


def load_checkpoint(path: Path, model_config: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint file.

    Raises:
        CheckpointError: If the file is missing or invalid.
    """
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), model_config)
