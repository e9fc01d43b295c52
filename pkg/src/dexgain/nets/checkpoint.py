"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      8 bytes   b"DXGCKPT\\x00"
    version    u32       currently 1
    meta_len   u32       length of the metadata blob
    meta       bytes     UTF-8 JSON, sorted keys, compact separators
    n_records  u32
    records    n_records times:
        name_len  u16
        name      UTF-8 bytes
        ndim      u8
        dims      ndim x u32
        values    prod(dims) x float64 little-endian, C order

Writing the same ParamSet and metadata always yields the same bytes. The same
record container (with a different magic) stores packed datasets.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from dexgain.nets.params import ParamSet

MAGIC = b"DXGCKPT\x00"
VERSION = 1


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def encode_records(magic: bytes, arrays, meta: dict | None = None) -> bytes:
    """Serialize ``(name, array)`` pairs in the given order."""
    arrays = list(arrays)
    meta_b = canonical_json(meta or {})
    out = [magic, struct.pack("<II", VERSION, len(meta_b)), meta_b, struct.pack("<I", len(arrays))]
    for name, value in arrays:
        value = np.asarray(value, dtype=np.float64)
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<B", value.ndim))
        out.append(struct.pack(f"<{value.ndim}I", *value.shape))
        out.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(out)


def decode_records(magic: bytes, buf: bytes) -> tuple[list, dict]:
    if buf[:8] != magic:
        raise ValueError(f"bad magic {buf[:8]!r}, expected {magic!r}")
    version, meta_len = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise ValueError(f"unsupported format version {version}")
    pos = 16
    meta = json.loads(buf[pos:pos + meta_len].decode())
    pos += meta_len
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    records = []
    for _ in range(n):
        (nl,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nl].decode()
        pos += nl
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        count = int(np.prod(dims)) if ndim else 1
        vals = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(dims)
        pos += 8 * count
        records.append((name, vals))
    if pos != len(buf):
        raise ValueError("trailing bytes after records")
    return records, meta


def encode_checkpoint(params: ParamSet, meta: dict | None = None) -> bytes:
    return encode_records(MAGIC, ((k, t.value) for k, t in params.items()), meta)


def decode_checkpoint(buf: bytes) -> tuple[ParamSet, dict]:
    records, meta = decode_records(MAGIC, buf)
    params = ParamSet()
    for name, vals in records:
        params.add(name, vals)
    return params, meta


def save_checkpoint(path, params: ParamSet, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(params, meta))
    return path


def load_checkpoint(path) -> tuple[ParamSet, dict]:
    return decode_checkpoint(Path(path).read_bytes())
