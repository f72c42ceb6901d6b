"""Unit tests for the checkpoint container."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import pytest

from disn.config import ModelConfig
from disn.core.checkpoint import (
    MAGIC,
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from disn.core.framework import Framework
from disn.core.optim import AdamState, HistoryRow
from disn.exceptions import (
    CheckpointError,
    CheckpointVersionError,
    ConfigMismatchError,
    CorruptTensorError,
    MissingTensorError,
)

MODEL = ModelConfig(input_dim=6, code_dim=4, env_hidden_dim=5, env_out_dim=3)


@pytest.fixture
def checkpoint() -> Checkpoint:
    """Return a checkpoint with non-trivial optimizer state."""
    framework = Framework(MODEL, 3, np.random.default_rng(11))
    for _, param in framework.named_params():
        param.m1[...] = 0.5
        param.m2[...] = 0.25
    framework.autoencoder.enc_bn.running_mean[...] = 1.5
    return Checkpoint(
        framework=framework,
        main_state=AdamState(t=12),
        adversary_state=AdamState(t=7),
        epoch=3,
        rng_state=np.random.default_rng(5).bit_generator.state,
        history=[HistoryRow(0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.001)],
        speakers=["a", "b", "c"],
        fingerprint="abc123",
    )


def split_header(data: bytes) -> tuple[dict, bytes]:
    """Return the JSON header and the tensor blocks of encoded bytes."""
    _, _, length = struct.unpack_from("<4sII", data, 0)
    header = json.loads(data[12 : 12 + length])
    return header, data[12 + length :]


def join_header(header: dict, blocks: bytes) -> bytes:
    """Re-assemble checkpoint bytes from a header and tensor blocks."""
    raw = json.dumps(header).encode("utf-8")
    return struct.pack("<4sII", MAGIC, 1, len(raw)) + raw + blocks


class TestEncodeDecode:
    """Tests for checkpoint serialization."""

    def test_restores_everything(self, checkpoint: Checkpoint) -> None:
        """Test tensors, moments, buffers and metadata."""
        restored = decode_checkpoint(encode_checkpoint(checkpoint), MODEL)
        for (name, a), (_, b) in zip(
            checkpoint.framework.named_params(), restored.framework.named_params(), strict=True
        ):
            np.testing.assert_array_equal(a.value, b.value, err_msg=name)
            np.testing.assert_array_equal(a.m1, b.m1, err_msg=name)
            np.testing.assert_array_equal(a.m2, b.m2, err_msg=name)
        assert restored.framework.autoencoder.enc_bn.running_mean[0] == 1.5
        assert restored.main_state == checkpoint.main_state
        assert restored.adversary_state.t == 7
        assert restored.epoch == 3
        assert restored.history == checkpoint.history
        assert restored.speakers == ["a", "b", "c"]
        assert restored.fingerprint == "abc123"
        assert restored.rng_state == checkpoint.rng_state

    def test_byte_stable(self, checkpoint: Checkpoint) -> None:
        """Test that re-encoding a decoded checkpoint gives identical bytes."""
        data = encode_checkpoint(checkpoint)
        assert encode_checkpoint(decode_checkpoint(data)) == data

    def test_rng_state_resumes_stream(self, checkpoint: Checkpoint) -> None:
        """Test that a restored generator continues the saved stream."""
        original = np.random.default_rng(0)
        original.bit_generator.state = checkpoint.rng_state
        restored = np.random.default_rng(0)
        restored.bit_generator.state = decode_checkpoint(encode_checkpoint(checkpoint)).rng_state
        np.testing.assert_array_equal(original.random(5), restored.random(5))

    def test_preamble(self, checkpoint: Checkpoint) -> None:
        """Test magic and version bytes."""
        data = encode_checkpoint(checkpoint)
        assert data[:4] == MAGIC
        assert struct.unpack_from("<I", data, 4) == (1,)


class TestErrors:
    """Tests for invalid checkpoints."""

    def test_bad_magic(self, checkpoint: Checkpoint) -> None:
        """Test magic validation."""
        data = b"XXXX" + encode_checkpoint(checkpoint)[4:]
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(data)

    def test_unknown_version(self, checkpoint: Checkpoint) -> None:
        """Test that a newer format version is refused."""
        data = bytearray(encode_checkpoint(checkpoint))
        data[4:8] = struct.pack("<I", 2)
        with pytest.raises(CheckpointVersionError):
            decode_checkpoint(bytes(data))

    def test_truncated(self, checkpoint: Checkpoint) -> None:
        """Test that a cut tensor block is detected."""
        with pytest.raises(CorruptTensorError, match="outside"):
            decode_checkpoint(encode_checkpoint(checkpoint)[:-4])

    def test_missing_tensor(self, checkpoint: Checkpoint) -> None:
        """Test that a tensor absent from the manifest is reported by name."""
        header, blocks = split_header(encode_checkpoint(checkpoint))
        header["tensors"] = [t for t in header["tensors"] if t["name"] != "env_spk.fc2.bias"]
        with pytest.raises(MissingTensorError, match="env_spk.fc2.bias"):
            decode_checkpoint(join_header(header, blocks))

    def test_wrong_shape(self, checkpoint: Checkpoint) -> None:
        """Test a manifest shape that disagrees with the model."""
        header, blocks = split_header(encode_checkpoint(checkpoint))
        header["tensors"][0]["shape"] = [99]
        with pytest.raises(CorruptTensorError, match="shape"):
            decode_checkpoint(join_header(header, blocks))

    def test_non_finite_tensor(self, checkpoint: Checkpoint) -> None:
        """Test that NaN weights are refused."""
        checkpoint.framework.autoencoder.enc_fc.weight.value[0, 0] = np.nan
        with pytest.raises(CorruptTensorError, match="non-finite"):
            decode_checkpoint(encode_checkpoint(checkpoint))

    def test_model_mismatch(self, checkpoint: Checkpoint) -> None:
        """Test that a different model config is refused."""
        other = MODEL.model_copy(update={"env_out_dim": 4})
        with pytest.raises(ConfigMismatchError):
            decode_checkpoint(encode_checkpoint(checkpoint), other)

    def test_bad_header_json(self) -> None:
        """Test a header that is not JSON."""
        data = struct.pack("<4sII", MAGIC, 1, 3) + b"{{{"
        with pytest.raises(CheckpointError, match="JSON"):
            decode_checkpoint(data)


class TestFiles:
    """Tests for checkpoint files."""

    def test_save_and_load(self, tmp_path: Path, checkpoint: Checkpoint) -> None:
        """Test an atomic write and a read back."""
        path = tmp_path / "run" / "checkpoint.disn"
        save_checkpoint(checkpoint, path)
        assert not (tmp_path / "run" / "checkpoint.disn.tmp").exists()
        assert load_checkpoint(path, MODEL).epoch == 3

    def test_missing_file(self, tmp_path: Path) -> None:
        """Test a missing checkpoint."""
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "nope.disn")
