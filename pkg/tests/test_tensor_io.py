import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from objmap.tensor_io import (TensorFormatError, decode_tensor, encode_tensor, read_checkpoint,
                              read_tensor, read_tensor_header, write_checkpoint, write_tensor)

DTYPES = [np.float32, np.float64, np.uint8, np.uint16, np.int32]


def test_round_trip_ones(tmp_path):
    a = np.ones((2, 3), dtype=np.float32)
    write_tensor(tmp_path / "a.obnt", a)
    b = read_tensor(tmp_path / "a.obnt")
    assert b.dtype == np.float32 and b.shape == (2, 3)
    assert np.array_equal(a, b)


def test_header_layout(tmp_path):
    write_tensor(tmp_path / "a.obnt", np.zeros((2, 3), dtype=np.uint16))
    raw = (tmp_path / "a.obnt").read_bytes()
    assert raw[:4] == b"OBNT"
    assert raw[4:7] == bytes([1, 3, 2])
    assert struct.unpack("<QQ", raw[7:23]) == (2, 3)
    assert len(raw) == 23 + 12
    assert read_tensor_header(tmp_path / "a.obnt") == (np.dtype("<u2"), (2, 3))


def test_truncated_payload(tmp_path):
    raw = encode_tensor(np.ones((2, 3), dtype=np.float32))
    (tmp_path / "t.obnt").write_bytes(raw[:-4])  # 20 payload bytes instead of 24
    with pytest.raises(TensorFormatError, match="truncated"):
        read_tensor(tmp_path / "t.obnt")


def test_bad_magic(tmp_path):
    raw = encode_tensor(np.ones(3, dtype=np.float32))
    (tmp_path / "m.obnt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(TensorFormatError, match="magic"):
        read_tensor(tmp_path / "m.obnt")


def test_unknown_dtype(tmp_path):
    raw = bytearray(encode_tensor(np.ones(3, dtype=np.float32)))
    raw[5] = 9
    (tmp_path / "d.obnt").write_bytes(bytes(raw))
    with pytest.raises(TensorFormatError, match="dtype"):
        read_tensor(tmp_path / "d.obnt")


def test_rejects_unsupported_arrays():
    with pytest.raises(TensorFormatError):
        encode_tensor(np.ones(3, dtype=np.int64))
    with pytest.raises(TensorFormatError):
        encode_tensor(np.ones((1, 1, 1, 1, 1), dtype=np.float32))


def test_trailing_bytes(tmp_path):
    (tmp_path / "x.obnt").write_bytes(encode_tensor(np.ones(2, dtype=np.uint8)) + b"\0")
    with pytest.raises(TensorFormatError):
        read_tensor(tmp_path / "x.obnt")


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(DTYPES).flatmap(
    lambda dt: hnp.arrays(dt, hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5))))
def test_round_trip_property(arr):
    raw = encode_tensor(arr)
    back = decode_tensor(io.BytesIO(raw))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()
    assert encode_tensor(back) == raw


def test_checkpoint_round_trip(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1, 2], dtype=np.int32)}
    write_checkpoint(tmp_path / "c.obck", {"k": 1}, tensors)
    meta, back = read_checkpoint(tmp_path / "c.obck")
    assert meta["k"] == 1 and meta["tensors"] == ["a", "b"]
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])
    raw = (tmp_path / "c.obck").read_bytes()
    (tmp_path / "d.obck").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(TensorFormatError):
        read_checkpoint(tmp_path / "d.obck")
