"""Tests for tensor_file.py — the `.spt` container and model checkpoints."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from securepose.tensor_file import (
    MAGIC,
    NAME_BYTES,
    TensorFileFormatError,
    atomic_write_text,
    checkpoint_header_path,
    decode_tensors,
    encode_record,
    encode_tensors,
    load_checkpoint,
    load_tensor,
    load_tensors,
    save_checkpoint,
    save_tensor,
    save_tensors,
)


class TestRecordLayout:
    def test_header_fields(self) -> None:
        raw = encode_record("w", np.arange(6, dtype=np.float32).reshape(2, 3))
        assert raw[:4] == MAGIC
        assert raw[4] == 2
        assert struct.unpack_from("<2I", raw, 5) == (2, 3)
        assert raw[13 : 13 + NAME_BYTES].rstrip(b"\0") == b"w"
        assert len(raw) == 13 + NAME_BYTES + 6 * 4

    def test_payload_little_endian_float32(self) -> None:
        raw = encode_record("x", np.array([1.5, -2.0]))
        payload = raw[9 + NAME_BYTES :]
        assert struct.unpack("<2f", payload) == (1.5, -2.0)

    def test_name_too_long(self) -> None:
        with pytest.raises(ValueError):
            encode_record("n" * (NAME_BYTES + 1), np.zeros(1))


class TestDecode:
    def test_round_trip_preserves_shapes(self) -> None:
        rng = np.random.default_rng(0)
        tensors = {
            "scalar": np.float32(3.25) * np.ones(()),
            "matrix": rng.normal(size=(3, 4)).astype(np.float32),
            "empty": np.zeros((0, 5), dtype=np.float32),
        }
        back = decode_tensors(encode_tensors(tensors))
        assert list(back) == list(tensors)
        for name, arr in tensors.items():
            assert back[name].dtype == np.float32
            np.testing.assert_array_equal(back[name], arr)

    def test_truncated_payload(self) -> None:
        raw = encode_tensors({"a": np.ones((2, 2))})
        with pytest.raises(TensorFileFormatError, match="payload"):
            decode_tensors(raw[:-1])

    def test_truncated_header(self) -> None:
        raw = encode_tensors({"a": np.ones(3)})
        with pytest.raises(TensorFileFormatError):
            decode_tensors(raw[:20])

    def test_bad_magic(self) -> None:
        raw = bytearray(encode_tensors({"a": np.ones(3)}))
        raw[4:8] = b"NOPE"
        with pytest.raises(TensorFileFormatError, match="magic"):
            decode_tensors(bytes(raw))

    def test_trailing_bytes(self) -> None:
        raw = encode_tensors({"a": np.ones(3)}) + b"\0"
        with pytest.raises(TensorFileFormatError, match="trailing"):
            decode_tensors(raw)

    def test_duplicate_names(self) -> None:
        record = encode_record("a", np.ones(1))
        with pytest.raises(TensorFileFormatError, match="duplicate"):
            decode_tensors(struct.pack("<I", 2) + record + record)

    def test_too_short(self) -> None:
        with pytest.raises(TensorFileFormatError):
            decode_tensors(b"\x01")


# ============================================================
# Files
# ============================================================


class TestFiles:
    def test_save_load(self, tmp_path: Path) -> None:
        path = save_tensors(tmp_path / "sub" / "t.spt", {"a": np.ones(2), "b": np.zeros((1, 1))})
        loaded = load_tensors(path)
        assert sorted(loaded) == ["a", "b"]

    def test_single_tensor(self, tmp_path: Path) -> None:
        path = save_tensor(tmp_path / "one.spt", "x", np.arange(4.0))
        np.testing.assert_array_equal(load_tensor(path), np.arange(4.0))
        np.testing.assert_array_equal(load_tensor(path, "x"), np.arange(4.0))
        with pytest.raises(KeyError):
            load_tensor(path, "y")

    def test_unnamed_load_of_multi_tensor_file(self, tmp_path: Path) -> None:
        path = save_tensors(tmp_path / "two.spt", {"a": np.ones(1), "b": np.ones(1)})
        with pytest.raises(TensorFileFormatError):
            load_tensor(path)

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError):
            load_tensors(tmp_path / "absent.spt")

    def test_corrupt_file_names_path(self, tmp_path: Path) -> None:
        path = tmp_path / "bad.spt"
        path.write_bytes(b"\x01\x00\x00\x00JUNK")
        with pytest.raises(TensorFileFormatError, match="bad.spt"):
            load_tensors(path)

    def test_atomic_write_leaves_no_temp_files(self, tmp_path: Path) -> None:
        atomic_write_text(tmp_path / "a.txt", "one")
        atomic_write_text(tmp_path / "a.txt", "two")
        assert (tmp_path / "a.txt").read_text() == "two"
        assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]


class TestCheckpoint:
    def test_round_trip(self, tmp_path: Path) -> None:
        path = tmp_path / "models" / "pose.spt"
        save_checkpoint(path, "csi2pose", {"channels": 8}, {"conv.w": np.ones((2, 2))})
        assert checkpoint_header_path(path).exists()
        config, tensors = load_checkpoint(path, "csi2pose")
        assert config == {"channels": 8}
        np.testing.assert_array_equal(tensors["conv.w"], np.ones((2, 2)))

    def test_kind_mismatch(self, tmp_path: Path) -> None:
        path = save_checkpoint(tmp_path / "d.spt", "detector", {}, {"w": np.ones(1)})
        with pytest.raises(TensorFileFormatError, match="csi2pose"):
            load_checkpoint(path, "csi2pose")

    def test_missing_header(self, tmp_path: Path) -> None:
        path = save_tensors(tmp_path / "bare.spt", {"w": np.ones(1)})
        with pytest.raises(FileNotFoundError):
            load_checkpoint(path, "detector")
