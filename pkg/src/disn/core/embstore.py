"""Binary embedding files (EMB1 container)."""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from disn.exceptions import (
    ArtifactError,
    DimensionMismatchError,
    EmbeddingFileError,
    MalformedHeaderError,
    TruncatedFileError,
)

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")
_ID_LENGTH = struct.Struct("<H")


def encode_embeddings(embeddings: dict[str, np.ndarray]) -> bytes:
    """Serialize an embedding map in insertion order.

    Layout: magic, u32 dim, u32 count, then per record a u16 id length, the UTF-8
    id and dim little-endian float32 values.
    """
    if not embeddings:
        return _HEADER.pack(MAGIC, 0, 0)
    dim = next(iter(embeddings.values())).shape[0]
    parts = [_HEADER.pack(MAGIC, dim, len(embeddings))]
    for utt_id, vector in embeddings.items():
        if vector.shape != (dim,):
            raise DimensionMismatchError(f"{utt_id} has shape {vector.shape}, expected ({dim},)")
        raw_id = utt_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise ArtifactError(f"Utterance id too long: {utt_id[:40]}...")
        parts.append(_ID_LENGTH.pack(len(raw_id)))
        parts.append(raw_id)
        parts.append(vector.astype("<f4").tobytes())
    return b"".join(parts)


def decode_embeddings(data: bytes, expected_dim: int | None = None) -> dict[str, np.ndarray]:
    """Parse EMB1 bytes.

    Args:
        data: File contents.
        expected_dim: Dimension the caller's config requires, if any.

    Returns:
        Mapping of utterance id to float32 vector.

    Raises:
        MalformedHeaderError: Bad magic or short header.
        DimensionMismatchError: Header dimension differs from expected_dim.
        TruncatedFileError: The payload ends inside a record.
    """
    if len(data) < _HEADER.size:
        raise MalformedHeaderError(f"File too short for an EMB1 header ({len(data)} bytes)")
    magic, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MalformedHeaderError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    if expected_dim is not None and count and dim != expected_dim:
        raise DimensionMismatchError(
            f"File declares dimension {dim}, config expects {expected_dim}"
        )

    embeddings: dict[str, np.ndarray] = {}
    offset = _HEADER.size
    vector_bytes = 4 * dim
    for index in range(count):
        if offset + _ID_LENGTH.size > len(data):
            raise TruncatedFileError(f"File truncated in record {index} (id length)")
        (id_length,) = _ID_LENGTH.unpack_from(data, offset)
        offset += _ID_LENGTH.size
        if offset + id_length + vector_bytes > len(data):
            raise TruncatedFileError(f"File truncated in record {index}")
        utt_id = data[offset : offset + id_length].decode("utf-8")
        offset += id_length
        embeddings[utt_id] = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(
            np.float32
        )
        offset += vector_bytes
    if offset != len(data):
        raise MalformedHeaderError(f"{len(data) - offset} trailing bytes after {count} records")
    return embeddings


def save_embeddings(embeddings: dict[str, np.ndarray], path: Path) -> None:
    """Write an embedding file atomically (temp file then rename)."""
    payload = encode_embeddings(embeddings)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as e:
        raise ArtifactError(f"Could not write {path}: {e}") from e


def load_embeddings(path: Path, expected_dim: int | None = None) -> dict[str, np.ndarray]:
    """Read an embedding file."""
    if not path.exists():
        raise EmbeddingFileError(f"Embedding file not found: {path}")
    return decode_embeddings(path.read_bytes(), expected_dim)
