"""Flat binary archive for named float32 tensors.

Byte layout (all integers little-endian):

    offset  size        field
    0       8           magic b"NTENSOR1"
    8       4           u32 entry count
    --- per entry, in order ---
            2           u16 name length in bytes
            name_len    utf-8 name
            1           u8 rank
            4 * rank    u32 dims, outermost first
            1           u8 dtype tag (0 = float32)
    --- after the last entry ---
            4 * total   row-major float32 payloads, concatenated in
                        entry order

Entry order is preserved exactly as given, and `digest` hashes the
serialized bytes, so two archives agree bitwise iff the same names map to
the same values in the same order.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import ArchiveError

MAGIC = b"NTENSOR1"
_DTYPE_F32 = 0


def _coerce(name, value):
    data = getattr(value, "data", value)
    arr = np.asarray(data)
    if arr.dtype != np.float32:
        raise ArchiveError(f"entry {name!r} must be float32, got {arr.dtype}")
    if arr.ndim > 255:
        raise ArchiveError(f"entry {name!r} rank {arr.ndim} exceeds format limit")
    return np.ascontiguousarray(arr) if arr.ndim else arr


def dump_bytes(named) -> bytes:
    """Serialize a name -> array/Tensor mapping; order is preserved."""
    header = [MAGIC, struct.pack("<I", len(named))]
    payload = []
    seen = set()
    for name, value in named.items():
        if name in seen:
            raise ArchiveError(f"duplicate entry name {name!r}")
        seen.add(name)
        arr = _coerce(name, value)
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ArchiveError(f"entry name too long ({len(nb)} bytes)")
        header.append(struct.pack("<H", len(nb)))
        header.append(nb)
        header.append(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            header.append(struct.pack("<I", d))
        header.append(struct.pack("<B", _DTYPE_F32))
        payload.append(arr.astype("<f4", copy=False).tobytes(order="C"))
    return b"".join(header) + b"".join(payload)


def load_bytes(blob: bytes) -> dict:
    """Inverse of `dump_bytes`; returns name -> float32 ndarray in file order."""
    if len(blob) < len(MAGIC) + 4:
        raise ArchiveError("archive truncated before header")
    if blob[: len(MAGIC)] != MAGIC:
        raise ArchiveError("bad magic, not a tensor archive")
    pos = len(MAGIC)
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    metas = []
    for _ in range(count):
        if pos + 2 > len(blob):
            raise ArchiveError("archive truncated in entry table")
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if pos + nlen + 1 > len(blob):
            raise ArchiveError("archive truncated in entry table")
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        if pos + 4 * rank + 1 > len(blob):
            raise ArchiveError("archive truncated in entry table")
        dims = struct.unpack_from(f"<{rank}I", blob, pos) if rank else ()
        pos += 4 * rank
        (tag,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        if tag != _DTYPE_F32:
            raise ArchiveError(f"entry {name!r} has unsupported dtype tag {tag}")
        metas.append((name, tuple(dims)))
    out = {}
    for name, dims in metas:
        if name in out:
            raise ArchiveError(f"duplicate entry name {name!r}")
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        end = pos + 4 * n
        if end > len(blob):
            raise ArchiveError(f"archive truncated in payload of {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(dims)
        out[name] = arr.astype(np.float32, copy=True)
        pos = end
    if pos != len(blob):
        raise ArchiveError(f"{len(blob) - pos} trailing bytes after payloads")
    return out


def save(path, named) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_bytes(named))


def load(path) -> dict:
    with open(path, "rb") as fh:
        return load_bytes(fh.read())


def digest(named) -> str:
    """sha256 hex of the serialized archive; order- and value-sensitive."""
    return hashlib.sha256(dump_bytes(named)).hexdigest()
