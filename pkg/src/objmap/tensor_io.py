"""Binary tensor files (``.obnt``) and multi-tensor checkpoint containers.

A tensor file is::

    b"OBNT" | version u8 (=1) | dtype u8 | ndim u8 | ndim x u64 shape | payload

All integers are little-endian and the payload is the row-major array in
little-endian byte order.
"""

from __future__ import annotations

import io
import json
import struct
from os import PathLike
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"OBNT"
VERSION = 1
MAX_NDIM = 4

DTYPE_CODES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
    3: np.dtype("<u2"),
    4: np.dtype("<i4"),
}
_CODE_OF = {dt: code for code, dt in DTYPE_CODES.items()}

CKPT_MAGIC = b"OBCK"


class TensorFormatError(ValueError):
    """Raised for malformed tensor or checkpoint files."""


def _dtype_code(arr: np.ndarray) -> int:
    for code, cand in DTYPE_CODES.items():
        if cand.kind == arr.dtype.kind and cand.itemsize == arr.dtype.itemsize:
            return code
    raise TensorFormatError(f"unsupported dtype {arr.dtype}")


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim > MAX_NDIM:
        raise TensorFormatError(f"ndim {arr.ndim} exceeds {MAX_NDIM}")
    code = _dtype_code(arr)
    le = np.ascontiguousarray(arr, dtype=DTYPE_CODES[code])
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + le.tobytes()


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TensorFormatError(f"truncated {what}: expected {n} bytes, got {len(buf)}")
    return buf


def _read_header(fh: BinaryIO) -> tuple[np.dtype, tuple[int, ...]]:
    magic = fh.read(4)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    version, code, ndim = struct.unpack("<BBB", _read_exact(fh, 3, "header"))
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if code not in DTYPE_CODES:
        raise TensorFormatError(f"unknown dtype code {code}")
    if ndim > MAX_NDIM:
        raise TensorFormatError(f"ndim {ndim} exceeds {MAX_NDIM}")
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "shape"))
    return DTYPE_CODES[code], tuple(int(s) for s in shape)


def decode_tensor(fh: BinaryIO) -> np.ndarray:
    """Read one tensor record from an open binary stream."""
    dtype, shape = _read_header(fh)
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = _read_exact(fh, nbytes, "payload")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def read_tensor(path: str | PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = decode_tensor(fh)
        if fh.read(1):
            raise TensorFormatError(f"{path}: trailing bytes after payload")
    return arr


def read_tensor_header(path: str | PathLike) -> tuple[np.dtype, tuple[int, ...]]:
    """Return ``(dtype, shape)`` without loading the payload."""
    with open(path, "rb") as fh:
        return _read_header(fh)


def write_tensor(path: str | PathLike, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def write_checkpoint(path: str | PathLike, header: Mapping, tensors: Mapping[str, np.ndarray]) -> None:
    """Write a JSON header followed by named tensor records.

    Layout: ``b"OBCK" | u32 header length | UTF-8 JSON | tensor records``.
    Tensor names are stored in the header under ``"tensors"`` in record order.
    """
    names = list(tensors)
    meta = dict(header)
    meta["tensors"] = names
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(CKPT_MAGIC)
    out.write(struct.pack("<I", len(blob)))
    out.write(blob)
    for name in names:
        out.write(encode_tensor(tensors[name]))
    Path(path).write_bytes(out.getvalue())


def read_checkpoint(path: str | PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != CKPT_MAGIC:
            raise TensorFormatError(f"{path}: bad checkpoint magic")
        (n,) = struct.unpack("<I", _read_exact(fh, 4, "checkpoint header length"))
        meta = json.loads(_read_exact(fh, n, "checkpoint header").decode("utf-8"))
        tensors = {name: decode_tensor(fh) for name in meta.get("tensors", [])}
    return meta, tensors
