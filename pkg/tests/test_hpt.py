import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from hpnet import hpt


class TestHpt:
    def test_header_layout(self):
        blob = hpt.encode(np.arange(6, dtype=np.float32).reshape(2, 3))
        assert blob[:4] == b"\x48\x50\x54\x31"
        assert blob[4:8] == bytes([0x00, 2, 0, 0])
        assert struct.unpack("<II", blob[8:16]) == (2, 3)
        assert np.frombuffer(blob[16:], dtype="<f4").tolist() == [0, 1, 2, 3, 4, 5]

    def test_file_roundtrip_is_byte_exact(self, tmp_path, rng):
        a = rng.standard_normal((3, 4, 5)).astype(np.float32)
        hpt.save(tmp_path / "a.hpt", a)
        b = hpt.load(tmp_path / "a.hpt")
        assert b.dtype == np.float32 and b.shape == a.shape
        assert hpt.encode(b) == (tmp_path / "a.hpt").read_bytes()
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float32, array_shapes(min_dims=1, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
    def test_roundtrip_property(self, a):
        blob = hpt.encode(a)
        assert hpt.encode(hpt.decode(blob)) == blob
        np.testing.assert_array_equal(hpt.decode(blob), a)

    @pytest.mark.parametrize("patch", [
        (0, b"XPT1"),        # magic
        (4, b"\x01"),        # dtype
        (6, b"\x01"),        # reserved
    ])
    def test_rejects_bad_header(self, patch):
        blob = bytearray(hpt.encode(np.zeros(2, dtype=np.float32)))
        at, value = patch
        blob[at:at + len(value)] = value
        with pytest.raises(hpt.FormatError):
            hpt.decode(bytes(blob))

    def test_rejects_truncated_payload(self):
        blob = hpt.encode(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(hpt.FormatError):
            hpt.decode(blob[:-1])
        with pytest.raises(hpt.FormatError):
            hpt.decode(blob + b"\x00")

    def test_rejects_non_finite(self):
        with pytest.raises(hpt.FormatError):
            hpt.encode(np.array([np.nan], dtype=np.float32))
