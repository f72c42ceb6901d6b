"""Content hashing for seeds and dataset fingerprints."""

from __future__ import annotations

import hashlib
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Mapping

    import numpy as np


def get_hasher() -> hashlib._Hash:
    """SHA-256 state shared by stream keys and embedding fingerprints.

    Checkpoints store fingerprints made with this hash, so changing it
    invalidates the dataset check of every saved run.
    """
    return hashlib.sha256()


def _truncate(digest: str, length: int | None) -> str:
    return digest[:length] if length is not None and length > 0 else digest


def hash_content(
    content: str,
    length: int | None = 16,
) -> str:
    """Hex digest of a name, used to derive per-stream seeds.

    Args:
        content: Text to hash, such as a random sub-stream name.
        length: Keep this many hex characters (None keeps all 64).

    Returns:
        Hexadecimal digest prefix.
    """
    hasher = get_hasher()
    hasher.update(content.encode("utf-8"))
    return _truncate(hasher.hexdigest(), length)


def stream_key(name: str) -> int:
    """Stable 32-bit integer key for a named random sub-stream."""
    return int(hash_content(name, length=8), 16)


def fingerprint_embeddings(
    embeddings: Mapping[str, np.ndarray],
    length: int | None = 16,
) -> str:
    """Hash an embedding store independent of insertion order.

    Vectors are hashed as little-endian float32, the on-disk precision, so a
    store and its reloaded copy share a fingerprint.

    Args:
        embeddings: Mapping of utterance id to vector.
        length: Keep this many hex characters (None keeps all 64).

    Returns:
        Hexadecimal digest prefix.
    """
    hasher = get_hasher()
    for utt_id in sorted(embeddings):
        hasher.update(utt_id.encode("utf-8"))
        hasher.update(embeddings[utt_id].astype("<f4").tobytes())
    return _truncate(hasher.hexdigest(), length)
