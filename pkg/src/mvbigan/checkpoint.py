"""Binary checkpoint container.

Layout, all integers little-endian:

    8 bytes   magic "MVBGCKPT"
    u32       format version
    u64       length of the meta block
    ...       meta block: UTF-8 JSON (configs, epoch counter, RNG state)
    u32       number of named records
    records   u16 name length, name UTF-8, u8 dtype code, u8 ndim,
              ndim x u64 dims, raw array payload
    u32       CRC-32 of everything above

Float payloads are raw little-endian 32-bit floats. Writes are atomic
(temp file in the target directory, then rename).
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib

import numpy as np

from .errors import CorruptCheckpoint, VersionMismatch

MAGIC = b"MVBGCKPT"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<i8"), 2: np.dtype("u1")}
_CODES_BY_KIND = {"f": 0, "i": 1, "u": 2}


def _encode_record(name: str, array: np.ndarray) -> bytes:
    code = _CODES_BY_KIND.get(array.dtype.kind)
    if code is None or array.dtype != _DTYPE_CODES[code]:
        raise ValueError(f"record '{name}' has unsupported dtype {array.dtype}")
    name_b = name.encode("utf-8")
    head = struct.pack("<H", len(name_b)) + name_b
    head += struct.pack("<BB", code, array.ndim)
    head += struct.pack(f"<{array.ndim}Q", *array.shape)
    return head + np.ascontiguousarray(array).tobytes()


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptCheckpoint(f"{self.path}: ends inside a record")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def save_container(path, meta: dict, records: dict) -> None:
    """Write meta + named arrays to `path` atomically."""
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<Q", len(meta_blob)))
    parts.append(meta_blob)
    parts.append(struct.pack("<I", len(records)))
    for name in sorted(records):
        parts.append(_encode_record(name, records[name]))
    body = b"".join(parts)
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_container(path) -> tuple:
    """Read (meta, records) back; verifies magic, version, and checksum."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8:
        raise CorruptCheckpoint(f"{path}: too short to be a checkpoint")
    if blob[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic {blob[:8]!r}")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CorruptCheckpoint(f"{path}: checksum mismatch")

    reader = _Reader(blob[:-4], path)
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: format version {version}, this build reads {FORMAT_VERSION}"
        )
    (meta_len,) = reader.unpack("<Q")
    try:
        meta = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable meta block: {exc}") from exc
    (n_records,) = reader.unpack("<I")
    records = {}
    for _ in range(n_records):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        code, ndim = reader.unpack("<BB")
        if code not in _DTYPE_CODES:
            raise CorruptCheckpoint(f"{path}: record '{name}' has dtype code {code}")
        shape = reader.unpack(f"<{ndim}Q")
        dtype = _DTYPE_CODES[code]
        payload = reader.take(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize)
        records[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if reader.pos != len(reader.blob):
        raise CorruptCheckpoint(f"{path}: {len(reader.blob) - reader.pos} stray bytes")
    return meta, records
