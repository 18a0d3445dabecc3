import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gkcmn.exceptions import ShapeError
from gkcmn.io import FormatError, dumps_gktn, loads_gktn, read_gktn, write_gktn, write_json


def test_header_layout():
    buf = dumps_gktn(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert buf[:4] == b"GKTN" and buf[4] == 1 and buf[5] == 2
    assert struct.unpack("<2Q", buf[6:22]) == (2, 3)
    assert np.array_equal(np.frombuffer(buf[22:], "<f4"), np.arange(6))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=5), st.integers(0, 10**6))
def test_round_trip(shape, seed):
    x = np.random.default_rng(seed).normal(size=shape).astype(np.float32)
    assert np.array_equal(loads_gktn(dumps_gktn(x)), x)


def test_file_round_trip(tmp_path):
    x = np.ones((2, 2), np.float32)
    write_gktn(tmp_path / "a.gktn", x)
    assert np.array_equal(read_gktn(tmp_path / "a.gktn"), x)


@pytest.mark.parametrize("buf", [b"", b"XKTN\x01\x01", b"GKTN\x02\x01" + bytes(12), b"GKTN\x01\x01" + struct.pack("<Q", 2) + bytes(4)])
def test_malformed(buf):
    with pytest.raises(FormatError):
        loads_gktn(buf)


def test_scalar_rejected():
    with pytest.raises(ShapeError):
        dumps_gktn(np.float32(1))


def test_json_is_stable(tmp_path):
    write_json(tmp_path / "a.json", {"b": 1, "a": [1.5]})
    assert (tmp_path / "a.json").read_text() == '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}\n'
