import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from changedet.pnm import (
    PnmError,
    RasterImage,
    bytes_to_float,
    float_to_bytes,
    read_mask,
    read_pnm,
    write_mask,
    write_pnm,
)


class TestRoundTrip:
    @settings(max_examples=30, deadline=None)
    @given(arrays(np.uint8, (5, 7), elements=st.integers(0, 255)))
    def test_gray_roundtrip(self, tmp_path_factory, pixels):
        path = tmp_path_factory.mktemp("pnm") / "img.pgm"
        write_pnm(RasterImage(pixels), path)
        back = read_pnm(path)
        assert back.channels == 1
        assert np.array_equal(back.pixels, pixels)

    def test_rgb_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, (4, 6, 3), dtype=np.uint8)
        write_pnm(RasterImage(pixels), tmp_path / "img.ppm")
        back = read_pnm(tmp_path / "img.ppm")
        assert back.channels == 3
        assert np.array_equal(back.pixels, pixels)

    def test_writes_are_deterministic(self, tmp_path):
        pixels = np.arange(12, dtype=np.uint8).reshape(3, 4)
        write_pnm(RasterImage(pixels), tmp_path / "a.pgm")
        write_pnm(RasterImage(pixels), tmp_path / "b.pgm")
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()


class TestCanonicalBytes:
    def test_hand_composed_2x2_gray(self, tmp_path):
        # P5 magic, dims, maxval, then 4 raw samples: 11 header + 4 payload bytes
        pixels = np.array([[0, 85], [170, 255]], dtype=np.uint8)
        path = tmp_path / "tiny.pgm"
        write_pnm(RasterImage(pixels), path)
        expected = b"P5\n2 2\n255\n" + bytes([0, 85, 170, 255])
        assert path.read_bytes() == expected
        assert len(expected) == 15

    def test_magic_dispatch(self, tmp_path):
        write_pnm(RasterImage(np.zeros((2, 2), dtype=np.uint8)), tmp_path / "g.pgm")
        write_pnm(RasterImage(np.zeros((2, 2, 3), dtype=np.uint8)), tmp_path / "c.ppm")
        assert (tmp_path / "g.pgm").read_bytes().startswith(b"P5\n")
        assert (tmp_path / "c.ppm").read_bytes().startswith(b"P6\n")


class TestHeaderParsing:
    def test_comments_anywhere_in_header(self, tmp_path):
        payload = bytes([1, 2, 3, 4, 5, 6])
        raw = b"P5 # magic\n# a comment line\n  3\n# another\n 2 # dims\n255\n" + payload
        path = tmp_path / "commented.pgm"
        path.write_bytes(raw)
        img = read_pnm(path)
        assert (img.width, img.height) == (3, 2)
        assert np.array_equal(img.pixels.reshape(-1), np.frombuffer(payload, np.uint8))

    def test_truncated_payload_reports_counts(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(PnmError, match="expected 16 bytes, got 7"):
            read_pnm(path)

    def test_unsupported_maxval(self, tmp_path):
        path = tmp_path / "deep.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(PnmError, match="maxval"):
            read_pnm(path)

    def test_bad_magic_mentions_offset(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P7\n2 2\n255\n" + bytes(4))
        with pytest.raises(PnmError, match="byte 0"):
            read_pnm(path)

    def test_garbage_dimension_token(self, tmp_path):
        path = tmp_path / "bad2.pgm"
        path.write_bytes(b"P5\nxx 2\n255\n" + bytes(4))
        with pytest.raises(PnmError, match="width"):
            read_pnm(path)


class TestFloatConversion:
    def test_round_half_away_from_zero(self):
        values = np.array([0.0, 84.5 / 255.0, 85.49 / 255.0, 1.0])
        assert float_to_bytes(values).tolist() == [0, 85, 85, 255]

    def test_clamping(self):
        assert float_to_bytes(np.array([-3.0, 2.0])).tolist() == [0, 255]

    def test_bytes_to_float_range(self):
        floats = bytes_to_float(np.array([0, 128, 255], dtype=np.uint8))
        assert floats[0] == 0.0 and floats[2] == 1.0 and 0.5 < floats[1] < 0.51

    def test_mask_roundtrip(self, tmp_path):
        mask = (np.random.default_rng(1).random((6, 6)) > 0.5).astype(np.uint8)
        write_mask(mask, tmp_path / "m.pgm")
        raw = read_pnm(tmp_path / "m.pgm").pixels
        assert set(np.unique(raw)) <= {0, 255}
        assert np.array_equal(read_mask(tmp_path / "m.pgm"), mask)
