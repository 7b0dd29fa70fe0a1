"""KCKP checkpoint payloads: named float32 buffers plus a JSON config block.

Layout (all integers unsigned 32-bit little-endian)::

    b"KCKP" | version byte 0x01 | entry count
    per entry: name length | UTF-8 name | rank | extents... | float32 LE values
    config length | UTF-8 JSON config

The entry count and the trailing config block are the envelope around the
buffer list; a payload without a config carries a zero-length block.
"""
import io
import json
import struct

import numpy as np

from energygan.errors import FormatError

MAGIC = b"KCKP"
VERSION = 1


def write_buffers(fh, buffers, config=None):
    fh.write(MAGIC)
    fh.write(bytes([VERSION]))
    items = list(buffers.items()) if isinstance(buffers, dict) else list(buffers)
    fh.write(struct.pack("<I", len(items)))
    for name, arr in items:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = json.dumps(config if config is not None else {}, sort_keys=True).encode("utf-8")
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)


def read_buffers(fh):
    """Return ``(buffers, config)``; ``buffers`` preserves file order."""
    if fh.read(4) != MAGIC:
        raise FormatError("not a KCKP payload (bad magic)")
    version = fh.read(1)
    if not version or version[0] != VERSION:
        raise FormatError(f"unsupported KCKP version {version!r}")
    (count,) = _unpack(fh, "<I")
    buffers = {}
    for _ in range(count):
        (nlen,) = _unpack(fh, "<I")
        name = _read_exact(fh, nlen).decode("utf-8")
        (rank,) = _unpack(fh, "<I")
        shape = _unpack(fh, f"<{rank}I") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(_read_exact(fh, 4 * n), dtype="<f4").astype(np.float32)
        buffers[name] = data.reshape(shape)
    (clen,) = _unpack(fh, "<I")
    config = json.loads(_read_exact(fh, clen).decode("utf-8")) if clen else {}
    if fh.read(1):
        raise FormatError("trailing bytes after KCKP config block")
    return buffers, config


def save(path, buffers, config=None):
    buf = io.BytesIO()
    write_buffers(buf, buffers, config)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load(path):
    with open(path, "rb") as fh:
        return read_buffers(fh)


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated KCKP payload: wanted {n} bytes, got {len(data)}")
    return data


def _unpack(fh, fmt):
    return struct.unpack(fmt, _read_exact(fh, struct.calcsize(fmt)))
