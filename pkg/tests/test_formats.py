import io
import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from energygan import formats, serialization
from energygan.errors import FormatError

finite32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


class TestKCKP:
    def test_round_trip(self):
        bufs = {"a.weight": np.arange(24, dtype=np.float32).reshape(2, 3, 4),
                "b": np.array([1.5], np.float32), "scalar": np.float32(3.25)}
        fh = io.BytesIO()
        serialization.write_buffers(fh, bufs, {"epoch": 3})
        fh.seek(0)
        back, cfg = serialization.read_buffers(fh)
        assert list(back) == list(bufs)
        for k in bufs:
            assert back[k].tobytes() == np.asarray(bufs[k]).tobytes()
        assert cfg == {"epoch": 3}

    def test_header_layout(self):
        fh = io.BytesIO()
        serialization.write_buffers(fh, {"w": np.zeros((2, 1), np.float32)})
        raw = fh.getvalue()
        assert raw[:4] == b"KCKP" and raw[4] == 1
        # count, name length, name, rank, extents
        assert raw[5:9] == (1).to_bytes(4, "little")
        assert raw[9:13] == (1).to_bytes(4, "little") and raw[13:14] == b"w"
        assert raw[14:18] == (2).to_bytes(4, "little")
        assert raw[18:26] == (2).to_bytes(4, "little") + (1).to_bytes(4, "little")

    def test_trailing_and_truncated_rejected(self):
        fh = io.BytesIO()
        serialization.write_buffers(fh, {"w": np.ones(3, np.float32)})
        raw = fh.getvalue()
        with pytest.raises(FormatError):
            serialization.read_buffers(io.BytesIO(raw + b"\0"))
        with pytest.raises(FormatError):
            serialization.read_buffers(io.BytesIO(raw[:-3]))
        with pytest.raises(FormatError):
            serialization.read_buffers(io.BytesIO(b"NOPE" + raw[4:]))

    @settings(max_examples=30, deadline=None)
    @given(hnp.arrays(np.float32, hnp.array_shapes(max_dims=3, max_side=4), elements=finite32))
    def test_bit_exact_property(self, arr):
        fh = io.BytesIO()
        serialization.write_buffers(fh, {"x": arr})
        fh.seek(0)
        back, _ = serialization.read_buffers(fh)
        assert back["x"].tobytes() == arr.tobytes()


class TestEDM:
    @settings(max_examples=30, deadline=None)
    @given(hnp.arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4)),
                      elements=finite32))
    def test_round_trip_bit_exact(self, tmp_path_factory, arr):
        path = str(tmp_path_factory.mktemp("edm") / "r.edm")
        formats.write_edm(path, arr)
        back = formats.read_edm(path, squeeze=False)
        assert back.tobytes() == arr.tobytes()

    def test_header_and_layout(self, tmp_path):
        arr = np.arange(2 * 3 * 2, dtype=np.float32).reshape(2, 3, 2)
        path = tmp_path / "x.edm"
        formats.write_edm(str(path), arr)
        raw = path.read_bytes()
        assert raw[:4] == b"EDM1"
        assert np.frombuffer(raw[4:16], "<u4").tolist() == [3, 2, 2]
        assert np.frombuffer(raw[16:], "<f4").tolist() == list(range(12))

    def test_single_channel_squeezes(self, tmp_path):
        path = str(tmp_path / "m.edm")
        formats.write_edm(path, np.ones((4, 5), np.float32))
        assert formats.read_edm(path).shape == (4, 5)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "t.edm"
        formats.write_edm(str(path), np.ones((2, 2), np.float32))
        path.write_bytes(path.read_bytes() + b"\0\0\0\0")
        with pytest.raises(FormatError):
            formats.read_edm(str(path))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "b.edm"
        path.write_bytes(b"EDM2" + bytes(12))
        with pytest.raises(FormatError):
            formats.read_edm(str(path))


class TestManifest:
    def test_every_file_exists_and_parses(self, tiny_dataset):
        m = formats.read_manifest(tiny_dataset)
        root = os.path.dirname(tiny_dataset)
        for rel in formats.referenced_paths(m):
            formats.read_edm(os.path.join(root, rel))
        top = max(float(formats.read_edm(os.path.join(root, e["energy_path"])).max())
                  for e in m["entries"])
        assert m["e_max"] >= top

    def test_entry_fields(self, tiny_dataset):
        m = formats.read_manifest(tiny_dataset)
        for key in ("format_version", "rng", "spec", "e_max", "entries"):
            assert key in m
        e = m["entries"][0]
        for key in ("id", "split", "base_index", "augmentation", "scene_path", "energy_path",
                    "annotations", "homography"):
            assert key in e
        assert len(e["homography"]) == 9
        assert set(e["annotations"][0]) == {"label", "energy_kcal", "mask_path"}

    def test_digest_tracks_file_bytes(self, tiny_dataset, tmp_path):
        import shutil

        root = tmp_path / "copy"
        shutil.copytree(os.path.dirname(tiny_dataset), root)
        path = str(root / "manifest.json")
        d0 = formats.manifest_digest(path)
        assert formats.manifest_digest(path) == d0
        rel = json.loads(open(path).read())["entries"][0]["energy_path"]
        arr = formats.read_edm(str(root / rel))
        formats.write_edm(str(root / rel), arr)
        assert formats.manifest_digest(path) == d0
        arr[0, 0] += 1
        formats.write_edm(str(root / rel), arr)
        assert formats.manifest_digest(path) != d0

    def test_version_checked(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"format_version": 99, "entries": []}))
        with pytest.raises(FormatError):
            formats.read_manifest(str(path))
