import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from linattn import lmat
from linattn.errors import FormatError

doubles = st.floats(allow_nan=False, allow_infinity=False, allow_subnormal=True)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 6), st.integers(0, 6)), elements=doubles))
def test_roundtrip_bit_exact(mat):
    back = lmat.decode(lmat.encode(mat))
    assert back.shape == mat.shape
    assert back.tobytes() == mat.tobytes()


def test_special_values(tmp_path):
    mat = np.array([[0.0, -0.0, 5e-324, -5e-324], [1.7976931348623157e308, -2.2250738585072014e-308,
                                                   1e-310, np.nextafter(0, 1)]])
    path = tmp_path / "m.lmat"
    lmat.write(path, mat)
    back = lmat.read(path)
    assert back.tobytes() == mat.tobytes()
    assert np.signbit(back[0, 1])


def test_header_layout():
    buf = lmat.encode(np.array([[1.0, 2.0, 3.0]]))
    assert buf[:6] == b"LMAT1\x00"
    assert struct.unpack("<II", buf[6:14]) == (1, 3)
    assert struct.unpack("<3d", buf[14:]) == (1.0, 2.0, 3.0)
    assert len(buf) == 14 + 24


def test_trailing_bytes_rejected():
    with pytest.raises(FormatError, match="trailing"):
        lmat.decode(lmat.encode(np.eye(2)) + b"\x00")


def test_truncated_rejected():
    with pytest.raises(FormatError, match="truncated"):
        lmat.decode(lmat.encode(np.eye(2))[:-1])
    with pytest.raises(FormatError):
        lmat.decode(b"LMAT1")


def test_bad_magic():
    buf = bytearray(lmat.encode(np.eye(2)))
    buf[0:4] = b"XMAT"
    with pytest.raises(FormatError, match="magic"):
        lmat.decode(bytes(buf))


def test_non_2d_rejected():
    with pytest.raises(FormatError):
        lmat.encode(np.zeros(3))
