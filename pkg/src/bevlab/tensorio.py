"""Reading and writing dense tensors in the OFT1 binary format.

OFT1 is the project's lingua franca for checkpoints, datasets and
pretraining targets.  Layout (all little-endian):

    bytes 0..3   magic ``OFT1``
    byte  4      dtype code: 1 = float32, 2 = float64
    byte  5      number of dimensions
    bytes 6..11  reserved, written as zeros
    next         ndim x u64 dimension sizes
    rest         raw scalars, row-major (C order)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"OFT1"

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class TensorFormatError(ValueError):
    """Raised when an .oft file is malformed (bad magic, dims, or size)."""


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write ``array`` to ``path`` in OFT1 format.

    Only float32 and float64 payloads are representable; other dtypes
    raise ``TensorFormatError`` rather than silently converting.
    """
    arr = np.asarray(array)
    code = _CODE_FOR_KIND.get(arr.dtype)
    if code is None:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    if arr.ndim == 0:
        raise TensorFormatError("zero-dimensional tensors are not supported")
    arr = np.ascontiguousarray(arr)
    header = MAGIC + struct.pack("<BB6x", code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(payload)


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an OFT1 file back into a numpy array (native byte order)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12:
        raise TensorFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}")
    code, ndim = struct.unpack_from("<BB", raw, 4)
    dtype = _DTYPE_CODES.get(code)
    if dtype is None:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    if ndim == 0:
        raise TensorFormatError(f"{path}: zero-dimensional tensor")
    dims_end = 12 + 8 * ndim
    if len(raw) < dims_end:
        raise TensorFormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}Q", raw, 12)
    if any(d == 0 for d in dims):
        raise TensorFormatError(f"{path}: zero-sized dimension in {dims}")
    count = int(np.prod(dims))
    expected = dims_end + count * dtype.itemsize
    if len(raw) != expected:
        raise TensorFormatError(
            f"{path}: expected {expected} bytes for dims {dims}, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=dims_end)
    return data.reshape(dims).astype(dtype.newbyteorder("="), copy=True)
