"""Binary tensor containers (`.spt`) and atomic file writes.

One record:

    offset  size        field
    0       4           magic b"SPT1"
    4       1           rank r
    5       4*r         dims, uint32 little-endian
    5+4r    64          name, UTF-8, zero-padded
    69+4r   4*prod(dims) float32 little-endian payload, row-major

A container is a uint32 little-endian record count followed by that many
records. Single-tensor files are containers of one.

Every writer in securepose goes through `atomic_write_bytes` /
`atomic_write_text`: the payload lands in a temp file in the target
directory and is moved into place with `os.replace`, so readers never
observe a half-written file.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

MAGIC = b"SPT1"
NAME_BYTES = 64
MAX_RANK = 255

_COUNT = struct.Struct("<I")


class TensorFileFormatError(ValueError):
    """A tensor file has a bad magic, truncated payload or inconsistent header."""


# ============================================================
# Atomic writes
# ============================================================


def atomic_write_bytes(path: Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


# ============================================================
# Encoding
# ============================================================


def encode_record(name: str, tensor: NDArray[np.floating]) -> bytes:
    arr = np.asarray(tensor)
    if arr.ndim > MAX_RANK:
        raise ValueError(f"{name}: rank {arr.ndim} exceeds {MAX_RANK}")
    if any(d >= 2**32 for d in arr.shape):
        raise ValueError(f"{name}: dimension too large for uint32: {arr.shape}")
    raw_name = name.encode("utf-8")
    if len(raw_name) > NAME_BYTES:
        raise ValueError(f"tensor name longer than {NAME_BYTES} bytes: {name!r}")
    header = MAGIC + struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return header + raw_name.ljust(NAME_BYTES, b"\0") + payload


def encode_tensors(tensors: Mapping[str, NDArray[np.floating]]) -> bytes:
    parts = [_COUNT.pack(len(tensors))]
    parts.extend(encode_record(name, arr) for name, arr in tensors.items())
    return b"".join(parts)


def _decode_record(raw: bytes, offset: int) -> tuple[str, NDArray[np.float32], int]:
    if raw[offset : offset + 4] != MAGIC:
        raise TensorFileFormatError(f"bad magic at byte {offset}: {raw[offset:offset + 4]!r}")
    if offset + 5 > len(raw):
        raise TensorFileFormatError(f"truncated header at byte {offset}")
    (rank,) = struct.unpack_from("<B", raw, offset + 4)
    dims_end = offset + 5 + 4 * rank
    name_end = dims_end + NAME_BYTES
    if name_end > len(raw):
        raise TensorFileFormatError(f"truncated header at byte {offset}")
    dims = struct.unpack_from(f"<{rank}I", raw, offset + 5)
    name = raw[dims_end:name_end].rstrip(b"\0").decode("utf-8")
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    end = name_end + 4 * count
    if end > len(raw):
        raise TensorFileFormatError(
            f"{name}: payload needs {4 * count} bytes, only {len(raw) - name_end} left"
        )
    if count == 0:
        return name, np.zeros(dims, dtype=np.float32), end
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=name_end)
    return name, data.astype(np.float32).reshape(dims), end


def decode_tensors(raw: bytes) -> dict[str, NDArray[np.float32]]:
    """Decode a whole container; raises before returning anything on a bad file."""
    if len(raw) < _COUNT.size:
        raise TensorFileFormatError("file too short for a record count")
    (count,) = _COUNT.unpack_from(raw, 0)
    offset = _COUNT.size
    out: dict[str, NDArray[np.float32]] = {}
    for _ in range(count):
        name, arr, offset = _decode_record(raw, offset)
        if name in out:
            raise TensorFileFormatError(f"duplicate tensor name {name!r}")
        out[name] = arr
    if offset != len(raw):
        raise TensorFileFormatError(f"{len(raw) - offset} trailing bytes after {count} records")
    return out


# ============================================================
# File API
# ============================================================


def save_tensors(path: Path, tensors: Mapping[str, NDArray[np.floating]]) -> Path:
    return atomic_write_bytes(path, encode_tensors(tensors))


def load_tensors(path: Path) -> dict[str, NDArray[np.float32]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"tensor file not found: {path}")
    try:
        return decode_tensors(path.read_bytes())
    except TensorFileFormatError as e:
        raise TensorFileFormatError(f"{path}: {e}") from e


def save_tensor(path: Path, name: str, tensor: NDArray[np.floating]) -> Path:
    return save_tensors(path, {name: tensor})


def load_tensor(path: Path, name: str | None = None) -> NDArray[np.float32]:
    """Load one tensor; `name` may be omitted for single-tensor files."""
    tensors = load_tensors(path)
    if name is None:
        if len(tensors) != 1:
            raise TensorFileFormatError(f"{path}: expected one tensor, found {len(tensors)}")
        return next(iter(tensors.values()))
    if name not in tensors:
        raise KeyError(f"{path}: no tensor named {name!r}")
    return tensors[name]


# ============================================================
# Model checkpoints
# ============================================================


def checkpoint_header_path(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def save_checkpoint(
    path: Path, kind: str, config: Mapping[str, Any], tensors: Mapping[str, NDArray[np.floating]]
) -> Path:
    """Tensors to `path` plus a `{kind, config}` JSON header beside it."""
    path = Path(path)
    save_tensors(path, tensors)
    header = {"kind": kind, "config": dict(config)}
    atomic_write_text(checkpoint_header_path(path), json.dumps(header, indent=2) + "\n")
    return path


def load_checkpoint(
    path: Path, kind: str
) -> tuple[dict[str, Any], dict[str, NDArray[np.float32]]]:
    path = Path(path)
    header_path = checkpoint_header_path(path)
    if not header_path.exists():
        raise FileNotFoundError(f"checkpoint header not found: {header_path}")
    header = json.loads(header_path.read_text(encoding="utf-8"))
    if header.get("kind") != kind:
        raise TensorFileFormatError(
            f"{header_path}: expected a {kind} checkpoint, found {header.get('kind')!r}"
        )
    return dict(header["config"]), load_tensors(path)
