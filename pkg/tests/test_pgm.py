"""Binary PGM heatmap writing, scaling, sidecars, and the round-trip reader."""

import json
import os

import numpy as np
import pytest

from lccad.pgm import (
    atomic_write_bytes,
    read_pgm,
    scale_to_gray,
    write_heatmap,
    write_pgm,
)


class TestScaleToGray:
    def test_endpoints_map_to_zero_and_full(self):
        gray, lo, hi = scale_to_gray(np.array([[0.0, 5.0], [10.0, 2.5]]))
        assert lo == 0.0 and hi == 10.0
        assert gray.dtype == np.uint8
        assert gray[0, 0] == 0
        assert gray[1, 0] == 255
        assert gray[0, 1] == 128  # rint(0.5 * 255)

    def test_constant_image_is_black(self):
        gray, lo, hi = scale_to_gray(np.full((3, 4), 7.0))
        assert lo == hi == 7.0
        assert not gray.any()

    def test_explicit_range_clips(self):
        gray, lo, hi = scale_to_gray(np.array([[-1.0, 0.5, 2.0]]).reshape(1, 3),
                                     lo=0.0, hi=1.0)
        assert (lo, hi) == (0.0, 1.0)
        np.testing.assert_array_equal(gray, [[0, 128, 255]])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            scale_to_gray(np.array([[np.nan, 1.0]]))

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError, match="2-D"):
            scale_to_gray(np.arange(4.0))


class TestPgmRoundTrip:
    def test_header_bytes(self, tmp_path):
        p = tmp_path / "img.pgm"
        write_pgm(p, np.arange(6, dtype=np.uint8).reshape(2, 3))
        blob = p.read_bytes()
        assert blob.startswith(b"P5\n3 2\n255\n")
        assert len(blob) == len(b"P5\n3 2\n255\n") + 6

    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        img = rng.integers(0, 256, size=(11, 7), dtype=np.uint8)
        p = tmp_path / "img.pgm"
        write_pgm(p, img)
        np.testing.assert_array_equal(read_pgm(p), img)

    def test_reader_handles_comments(self, tmp_path):
        p = tmp_path / "img.pgm"
        p.write_bytes(b"P5\n# a comment\n2 2\n255\n\x00\x01\x02\x03")
        np.testing.assert_array_equal(read_pgm(p), [[0, 1], [2, 3]])

    def test_reader_rejects_other_formats(self, tmp_path):
        p = tmp_path / "img.ppm"
        p.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(ValueError, match="not a binary PGM"):
            read_pgm(p)

    def test_reader_rejects_wide_maxval(self, tmp_path):
        p = tmp_path / "img.pgm"
        p.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(ValueError, match="maxval 255"):
            read_pgm(p)


class TestWriteHeatmap:
    def test_sidecar_records_scaling(self, tmp_path):
        p = str(tmp_path / "heat.pgm")
        lo, hi = write_heatmap(p, np.array([[1.0, 3.0], [2.0, 5.0], [4.0, 1.5]]))
        assert (lo, hi) == (1.0, 5.0)
        meta = json.loads((tmp_path / "heat.pgm.json").read_text())
        assert meta == {
            "format": "P5",
            "maxval": 255,
            "height": 3,
            "width": 2,
            "lo": 1.0,
            "hi": 5.0,
        }
        img = read_pgm(p)
        assert img.shape == (3, 2)
        # recover values from gray levels with the sidecar range
        recovered = meta["lo"] + img / 255.0 * (meta["hi"] - meta["lo"])
        np.testing.assert_allclose(
            recovered, [[1.0, 3.0], [2.0, 5.0], [4.0, 1.5]], atol=(hi - lo) / 255
        )

    def test_deterministic_bytes(self, tmp_path):
        vals = np.linspace(0, 1, 12).reshape(3, 4)
        a, b = str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm")
        write_heatmap(a, vals)
        write_heatmap(b, vals)
        assert open(a, "rb").read() == open(b, "rb").read()
        assert open(a + ".json").read() == open(b + ".json").read()


class TestAtomicWrite:
    def test_writes_payload_and_leaves_no_temp_files(self, tmp_path):
        p = tmp_path / "out.bin"
        atomic_write_bytes(str(p), b"hello")
        assert p.read_bytes() == b"hello"
        atomic_write_bytes(str(p), b"replaced")
        assert p.read_bytes() == b"replaced"
        leftovers = [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")]
        assert leftovers == []
