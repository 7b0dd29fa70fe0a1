"""On-disk formats: EDM rasters and the dataset manifest.

EDM layout: ``b"EDM1"``, then width, height, channels as unsigned 32-bit
little-endian integers, then ``width*height*channels`` float32 LE values in
row-major, channel-interleaved order. Nothing may follow the payload.
"""
import hashlib
import json
import os
import struct

import numpy as np

from energygan.errors import FormatError

EDM_MAGIC = b"EDM1"
MANIFEST_VERSION = 1


def write_edm(path, raster):
    arr = np.asarray(raster)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise FormatError(f"EDM rasters are (H, W) or (H, W, C), got {arr.shape}")
    height, width, channels = arr.shape
    with open(path, "wb") as fh:
        fh.write(EDM_MAGIC)
        fh.write(struct.pack("<III", width, height, channels))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_edm(path, squeeze=True):
    """Read an EDM file as float32 ``(H, W, C)``; single-channel squeezes to ``(H, W)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != EDM_MAGIC:
        raise FormatError(f"{path}: not an EDM raster (bad magic)")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    width, height, channels = struct.unpack("<III", blob[4:16])
    expected = 16 + 4 * width * height * channels
    if len(blob) != expected:
        raise FormatError(f"{path}: payload is {len(blob)} bytes, header implies {expected}")
    arr = np.frombuffer(blob, dtype="<f4", offset=16).astype(np.float32)
    arr = arr.reshape(height, width, channels)
    return arr[:, :, 0] if squeeze and channels == 1 else arr


def write_manifest(path, manifest):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {manifest.get('format_version')!r}")
    return manifest


def referenced_paths(manifest):
    for entry in manifest["entries"]:
        yield entry["scene_path"]
        yield entry["energy_path"]
        for ann in entry["annotations"]:
            yield ann["mask_path"]


def manifest_digest(path):
    """SHA-256 over the manifest bytes and every referenced file, in order."""
    root = os.path.dirname(os.path.abspath(path))
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    for rel in referenced_paths(read_manifest(path)):
        h.update(rel.encode("utf-8"))
        with open(os.path.join(root, rel), "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def load_split(path, split):
    """Stack one split into arrays.

    Returns ``(ids, scenes (N,H,W,3), energies (N,H,W), e_max)``.
    """
    manifest = read_manifest(path)
    root = os.path.dirname(os.path.abspath(path))
    entries = [e for e in manifest["entries"] if e["split"] == split]
    ids = [e["id"] for e in entries]
    scenes = [read_edm(os.path.join(root, e["scene_path"])) for e in entries]
    energies = [read_edm(os.path.join(root, e["energy_path"])) for e in entries]
    if not entries:
        return ids, np.zeros((0, 0, 0, 3), np.float32), np.zeros((0, 0, 0), np.float32), manifest["e_max"]
    return ids, np.stack(scenes), np.stack(energies), float(manifest["e_max"])
