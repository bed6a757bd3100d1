"""Archive format: golden bytes, round trips, corruption handling."""

import struct

import numpy as np
import pytest

from promptfusion import archive
from promptfusion.errors import ArchiveError
from promptfusion.tensor import Tensor


def test_golden_bytes_single_entry():
    # one 2x3 float32 tensor named "w"; header assembled by hand
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    got = archive.dump_bytes({"w": arr})
    want = (
        b"NTENSOR1"
        + struct.pack("<I", 1)
        + struct.pack("<H", 1) + b"w"
        + struct.pack("<B", 2)
        + struct.pack("<I", 2) + struct.pack("<I", 3)
        + struct.pack("<B", 0)
        + arr.tobytes()
    )
    assert got == want


def test_roundtrip_multiple_entries_preserves_order_and_values():
    rng = np.random.default_rng(0)
    named = {
        "b": rng.normal(size=(3,)).astype(np.float32),
        "a": rng.normal(size=(2, 2)).astype(np.float32),
        "s": np.float32(4.25).reshape(()),
    }
    back = archive.load_bytes(archive.dump_bytes(named))
    assert list(back) == ["b", "a", "s"]
    for k in named:
        assert back[k].dtype == np.float32
        assert back[k].shape == named[k].shape
        assert np.array_equal(back[k], named[k])


def test_save_load_file(tmp_path):
    p = tmp_path / "weights.nt"
    named = {"x": np.float32([[1, 2], [3, 4]])}
    archive.save(p, named)
    assert np.array_equal(archive.load(p)["x"], named["x"])


def test_accepts_tensor_values():
    t = Tensor(np.float32([1.0, 2.0]), trainable=True)
    back = archive.load_bytes(archive.dump_bytes({"t": t}))
    assert np.array_equal(back["t"], t.data)


def test_digest_sensitive_to_value_name_order():
    a = {"x": np.float32([1.0]), "y": np.float32([2.0])}
    assert archive.digest(a) == archive.digest({k: v.copy() for k, v in a.items()})
    assert archive.digest(a) != archive.digest({"x": np.float32([1.0]), "y": np.float32([2.5])})
    assert archive.digest(a) != archive.digest({"y": np.float32([2.0]), "x": np.float32([1.0])})


def test_rejects_bad_magic_truncation_trailing():
    blob = archive.dump_bytes({"x": np.float32([1.0, 2.0])})
    with pytest.raises(ArchiveError):
        archive.load_bytes(b"NOTMAGIC" + blob[8:])
    with pytest.raises(ArchiveError):
        archive.load_bytes(blob[:-3])
    with pytest.raises(ArchiveError):
        archive.load_bytes(blob + b"\x00")


def test_rejects_wrong_dtype_inputs():
    with pytest.raises(ArchiveError):
        archive.dump_bytes({"x": np.float64([1.0])})
    blob = bytearray(archive.dump_bytes({"x": np.float32([1.0])}))
    blob[8 + 4 + 2 + 1 + 1 + 4] = 7  # dtype tag byte
    with pytest.raises(ArchiveError):
        archive.load_bytes(bytes(blob))
