"""Binary tensor container and CSV export.

Single tensor (``.cmat``)::

    b"CMAT" | version u16 | rank u16 | rank x extent u64 | payload f64
    (all little-endian, payload row-major)

Checkpoint (``.ckpt``): a named-tensor index plus string metadata::

    b"CMCK" | version u16 | n_meta u32 | {key, value}* | n_tensors u32 | {name, CMAT record}*

Strings are stored as a u32 byte length followed by UTF-8 bytes.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

TENSOR_MAGIC = b"CMAT"
CHECKPOINT_MAGIC = b"CMCK"
VERSION = 1


class FormatError(ValueError):
    pass


def _write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype="<f8")  # tobytes() emits C order; keeps rank 0 intact
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<HH", VERSION, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("truncated tensor container")
    return buf


def _read_tensor(fh: BinaryIO) -> np.ndarray:
    if _read_exact(fh, 4) != TENSOR_MAGIC:
        raise FormatError("bad magic: not a CMAT tensor")
    version, rank = struct.unpack("<HH", _read_exact(fh, 4))
    if version != VERSION:
        raise FormatError(f"unsupported CMAT version {version}")
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
    return data.astype(np.float64).reshape(shape)


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    _write_tensor(buf, arr)
    return buf.getvalue()


def tensor_from_bytes(raw: bytes) -> np.ndarray:
    return _read_tensor(io.BytesIO(raw))


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        _write_tensor(fh, np.asarray(arr))


def load_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        return _read_tensor(fh)


def _write_str(fh: BinaryIO, s: str) -> None:
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_str(fh: BinaryIO) -> str:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n).decode("utf-8")


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray],
                    meta: dict[str, str] | None = None) -> None:
    meta = meta or {}
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(meta)))
        for key in sorted(meta):
            _write_str(fh, key)
            _write_str(fh, str(meta[key]))
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            _write_str(fh, name)
            _write_tensor(fh, np.asarray(tensors[name]))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<H", _read_exact(fh, 2))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (n_meta,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = {}
        for _ in range(n_meta):
            key = _read_str(fh)
            meta[key] = _read_str(fh)
        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors = {}
        for _ in range(n_tensors):
            name = _read_str(fh)
            tensors[name] = _read_tensor(fh)
    return tensors, meta


def save_csv(path: str | Path, arr: np.ndarray, header: list[str] | None = None,
             index: list[str] | None = None) -> None:
    """One row per leading index; trailing axes flattened. Values use repr, so they round-trip."""
    arr = np.asarray(arr, dtype=np.float64)
    rows = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(-1, 1)
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(",".join(([""] if index is not None else []) + list(header)) + "\n")
        for i, row in enumerate(rows):
            cells = [repr(float(v)) for v in row]
            if index is not None:
                cells.insert(0, index[i])
            fh.write(",".join(cells) + "\n")


def load_csv(path: str | Path, header: bool = False, index: bool = False) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    for line in lines[1 if header else 0:]:
        if not line:
            continue
        cells = line.split(",")[1 if index else 0:]
        rows.append([float(c) for c in cells])
    return np.array(rows, dtype=np.float64)
