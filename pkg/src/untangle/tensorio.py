"""Binary tensor container shared by datasets, representations and checkpoints.

A single tensor record is::

    b"DTNS" | u32 version=1 | u32 dtype | u32 rank | rank x u64 dims | payload

with dtype 1 = float32 little-endian and 2 = int64 little-endian, payload in
row-major order. All integers are little-endian.

A checkpoint bundles several named records behind a JSON header::

    b"DCKP" | u32 version=1 | u64 header length | header (UTF-8 JSON) | records

where ``header["tensors"]`` lists the record names in file order.
"""

import json
import struct

import numpy as np

MAGIC = b"DTNS"
BUNDLE_MAGIC = b"DCKP"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<i8")}
CODES = {np.dtype("<f4"): 1, np.dtype("<i8"): 2}


class TensorFormatError(ValueError):
    pass


def _as_storable(array):
    array = np.asarray(array)
    if np.issubdtype(array.dtype, np.floating):
        return np.ascontiguousarray(array, dtype="<f4")
    if np.issubdtype(array.dtype, np.integer) or array.dtype == np.bool_:
        return np.ascontiguousarray(array, dtype="<i8")
    raise TensorFormatError(f"cannot store dtype {array.dtype}")


def encode_tensor(array):
    array = _as_storable(array)
    head = MAGIC + struct.pack("<III", VERSION, CODES[array.dtype], array.ndim)
    head += struct.pack(f"<{array.ndim}Q", *array.shape)
    return head + array.tobytes(order="C")


def decode_tensor(buf, offset=0):
    """Decode one record starting at ``offset``; returns ``(array, next_offset)``."""
    if buf[offset:offset + 4] != MAGIC:
        raise TensorFormatError("bad magic, not a DTNS tensor")
    version, code, rank = struct.unpack_from("<III", buf, offset + 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported DTNS version {version}")
    if code not in DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    pos = offset + 16
    dims = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    dtype = DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    nbytes = count * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise TensorFormatError("truncated tensor payload")
    array = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(dims).copy()
    return array, pos + nbytes


def save_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def load_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    array, end = decode_tensor(buf)
    if end != len(buf):
        raise TensorFormatError(f"{len(buf) - end} trailing bytes after tensor")
    return array


def save_bundle(path, header, tensors):
    """Write named tensors plus a JSON header; ``tensors`` is an ordered mapping."""
    header = dict(header)
    header["tensors"] = list(tensors)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC + struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for name in tensors:
            fh.write(encode_tensor(tensors[name]))


def load_bundle(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != BUNDLE_MAGIC:
        raise TensorFormatError("bad magic, not a checkpoint bundle")
    version, length = struct.unpack_from("<IQ", buf, 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported bundle version {version}")
    pos = 16
    header = json.loads(buf[pos:pos + length].decode("utf-8"))
    pos += length
    tensors = {}
    for name in header["tensors"]:
        tensors[name], pos = decode_tensor(buf, pos)
    if pos != len(buf):
        raise TensorFormatError("trailing bytes after bundle")
    return header, tensors
