"""OFT1 container round-trips and malformed-file handling."""

import struct

import numpy as np
import pytest

from bevlab.tensorio import MAGIC, TensorFormatError, read_tensor, write_tensor


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(3,), (2, 5), (4, 1, 6), (2, 3, 4, 5)])
def test_round_trip(tmp_path, dtype, shape):
    rng = np.random.default_rng(0)
    a = rng.normal(size=shape).astype(dtype)
    p = tmp_path / "t.oft"
    write_tensor(p, a)
    b = read_tensor(p)
    assert b.dtype == np.dtype(dtype)
    assert b.shape == shape
    np.testing.assert_array_equal(a, b)


def test_header_bytes_exact(tmp_path):
    """The on-disk layout is pinned: magic, dtype code, ndim, 6 reserved
    zeros, u64 dims, then raw little-endian scalars."""
    a = np.array([[1.0, 2.0]], dtype=np.float64)
    p = tmp_path / "t.oft"
    write_tensor(p, a)
    raw = p.read_bytes()
    assert raw[:4] == b"OFT1"
    assert raw[4] == 2          # float64 code
    assert raw[5] == 2          # ndim
    assert raw[6:12] == b"\x00" * 6
    assert struct.unpack("<2Q", raw[12:28]) == (1, 2)
    assert raw[28:] == struct.pack("<2d", 1.0, 2.0)
    assert len(raw) == 12 + 16 + 16


def test_float32_code_is_1(tmp_path):
    p = tmp_path / "t.oft"
    write_tensor(p, np.zeros(3, dtype=np.float32))
    assert p.read_bytes()[4] == 1


def test_write_rejects_other_dtypes(tmp_path):
    with pytest.raises(TensorFormatError):
        write_tensor(tmp_path / "t.oft", np.zeros(3, dtype=np.int64))
    with pytest.raises(TensorFormatError):
        write_tensor(tmp_path / "t.oft", np.float64(1.0))  # 0-d


def test_non_contiguous_input_round_trips(tmp_path):
    a = np.arange(24, dtype=np.float64).reshape(4, 6)[:, ::2]
    p = tmp_path / "t.oft"
    write_tensor(p, a)
    np.testing.assert_array_equal(read_tensor(p), a)


def test_bad_magic_names_file(tmp_path):
    p = tmp_path / "bad.oft"
    p.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(TensorFormatError, match="bad.oft"):
        read_tensor(p)


def test_unknown_dtype_code(tmp_path):
    p = tmp_path / "t.oft"
    write_tensor(p, np.zeros(2))
    raw = bytearray(p.read_bytes())
    raw[4] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(TensorFormatError, match="dtype code"):
        read_tensor(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.oft"
    write_tensor(p, np.zeros((3, 3)))
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(TensorFormatError):
        read_tensor(p)


def test_truncated_header(tmp_path):
    p = tmp_path / "t.oft"
    p.write_bytes(MAGIC + b"\x02")
    with pytest.raises(TensorFormatError, match="truncated"):
        read_tensor(p)


def test_zero_sized_dim_rejected(tmp_path):
    p = tmp_path / "t.oft"
    header = MAGIC + struct.pack("<BB6x", 2, 1) + struct.pack("<Q", 0)
    p.write_bytes(header)
    with pytest.raises(TensorFormatError, match="zero-sized"):
        read_tensor(p)


def test_read_returns_native_order_copy(tmp_path):
    p = tmp_path / "t.oft"
    write_tensor(p, np.ones(4))
    out = read_tensor(p)
    assert out.dtype.byteorder in ("=", "<", ">")  # native
    out[0] = 7.0  # must be writable (a copy, not a frombuffer view)
