import struct

import numpy as np
import pytest

from untangle.tensorio import (TensorFormatError, decode_tensor, encode_tensor, load_bundle,
                               load_tensor, save_bundle, save_tensor)


def test_layout_is_exact():
    arr = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
    blob = encode_tensor(arr)
    expected = (b"DTNS" + struct.pack("<III", 1, 1, 2) + struct.pack("<QQ", 1, 3)
                + struct.pack("<3f", 1.0, 2.0, 3.0))
    assert blob == expected


def test_int_code_and_round_trip(tmp_path):
    arr = np.arange(12, dtype=np.int64).reshape(3, 4)
    save_tensor(tmp_path / "a.bin", arr)
    out = load_tensor(tmp_path / "a.bin")
    assert out.dtype == np.int64 and np.array_equal(out, arr)
    assert encode_tensor(arr)[8:12] == struct.pack("<I", 2)


def test_empty_tensor(tmp_path):
    arr = np.zeros((0, 7), dtype=np.float32)
    save_tensor(tmp_path / "e.bin", arr)
    assert load_tensor(tmp_path / "e.bin").shape == (0, 7)


def test_bad_inputs():
    with pytest.raises(TensorFormatError):
        decode_tensor(b"XXXX" + b"\0" * 12)
    blob = encode_tensor(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(TensorFormatError):
        decode_tensor(blob[:-1])
    with pytest.raises(TensorFormatError):
        encode_tensor(np.array(["a"]))


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.bin"
    path.write_bytes(encode_tensor(np.ones(3, dtype=np.float32)) + b"\0")
    with pytest.raises(TensorFormatError):
        load_tensor(path)


def test_bundle_round_trip(tmp_path):
    tensors = {"w": np.ones((2, 3), dtype=np.float32), "steps": np.arange(4, dtype=np.int64)}
    save_bundle(tmp_path / "b.ckpt", {"note": "x"}, tensors)
    header, out = load_bundle(tmp_path / "b.ckpt")
    assert header["note"] == "x"
    assert set(out) == {"w", "steps"} and np.array_equal(out["steps"], tensors["steps"])
