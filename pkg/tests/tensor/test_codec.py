"""Unit tests for src/dynsal/tensor/codec.py.

Run with: python -m pytest tests/tensor/test_codec.py -v
"""
from __future__ import annotations

import struct

import numpy as np
import pytest

from dynsal.errors import DataError
from dynsal.tensor.codec import MAGIC, decode_stns, encode_stns, read_stns, write_stns


class TestEncode:
    def test_header_layout(self):
        blob = encode_stns(np.zeros((2, 3)))
        assert blob[:4] == b"STNS"
        assert blob[4:6] == bytes([1, 2])
        assert struct.unpack("<2I", blob[6:14]) == (2, 3)
        assert len(blob) == 14 + 6 * 4

    def test_payload_is_little_endian_float32_row_major(self):
        blob = encode_stns(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert blob[14:] == np.array([1, 2, 3, 4], dtype="<f4").tobytes()

    def test_zero_dimension_rejected(self):
        with pytest.raises(DataError):
            encode_stns(np.zeros((2, 0)))

    def test_scalar_rejected(self):
        with pytest.raises(DataError):
            encode_stns(np.float64(1.0))


class TestDecode:
    def test_values_come_back_as_float64_of_float32(self, rng):
        x = rng.normal(size=(3, 4, 2))
        out = decode_stns(encode_stns(x))
        assert out.dtype == np.float64
        np.testing.assert_array_equal(out, x.astype(np.float32).astype(np.float64))

    def test_frame_pixel_values_are_exact(self):
        frame = np.arange(256, dtype=float).reshape(16, 16, 1)
        np.testing.assert_array_equal(decode_stns(encode_stns(frame)), frame)

    def test_bad_magic(self):
        with pytest.raises(DataError, match="magic"):
            decode_stns(b"NOPE" + bytes(10))

    def test_unsupported_version(self):
        blob = bytearray(encode_stns(np.zeros(2)))
        blob[4] = 2
        with pytest.raises(DataError, match="version"):
            decode_stns(bytes(blob))

    def test_truncated_header(self):
        with pytest.raises(DataError, match="header"):
            decode_stns(MAGIC + bytes([1, 3]) + struct.pack("<I", 2))

    def test_zero_ndim(self):
        with pytest.raises(DataError):
            decode_stns(MAGIC + bytes([1, 0]))

    def test_zero_dimension(self):
        with pytest.raises(DataError, match="positive"):
            decode_stns(MAGIC + bytes([1, 1]) + struct.pack("<I", 0))

    @pytest.mark.parametrize("delta", [-4, 4])
    def test_payload_length_must_match(self, delta):
        blob = encode_stns(np.zeros((2, 2)))
        blob = blob[:delta] if delta < 0 else blob + bytes(delta)
        with pytest.raises(DataError, match="payload"):
            decode_stns(blob)


class TestFiles:
    def test_write_creates_parents(self, tmp_path):
        path = write_stns(tmp_path / "a" / "b" / "x.stns", np.ones((2, 2)))
        assert path.is_file()
        np.testing.assert_array_equal(read_stns(path), np.ones((2, 2)))

    def test_missing_file_is_data_error(self, tmp_path):
        with pytest.raises(DataError):
            read_stns(tmp_path / "missing.stns")

    def test_error_names_the_file(self, tmp_path):
        path = tmp_path / "bad.stns"
        path.write_bytes(b"garbage")
        with pytest.raises(DataError, match="bad.stns"):
            read_stns(path)
