import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from egomap.errors import FormatError
from egomap.formats import (
    decode_grnv,
    encode_grnv,
    read_grnv,
    read_pfm,
    read_ppm,
    write_grnv,
    write_pfm,
    write_ppm,
)


def test_grnv_header_layout():
    buf = encode_grnv(np.zeros((32, 32, 32, 4)))
    assert buf[:4] == b"GRNV"
    assert struct.unpack("<5I", buf[4:24]) == (1, 32, 32, 32, 4)
    assert len(buf) == 24 + 4 * 32**3 * 4


def test_grnv_linear_index_order():
    data = np.arange(2 * 3 * 4 * 5, dtype=float).reshape(2, 3, 4, 5)
    payload = np.frombuffer(encode_grnv(data)[24:], dtype="<f4")
    i, j, k, ch = 1, 2, 3, 4
    assert payload[((i * 3 + j) * 4 + k) * 5 + ch] == data[i, j, k, ch]


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 1000))
def test_grnv_round_trip(w, h, d, c, seed):
    data = np.random.default_rng(seed).normal(size=(w, h, d, c)).astype(np.float32)
    np.testing.assert_array_equal(decode_grnv(encode_grnv(data)), data)


def test_grnv_file_round_trip(tmp_path):
    data = np.random.default_rng(0).uniform(size=(3, 4, 5, 2)).astype(np.float32)
    write_grnv(tmp_path / "v.grnv", data)
    np.testing.assert_array_equal(read_grnv(tmp_path / "v.grnv"), data)


def test_grnv_errors_report_offsets():
    good = encode_grnv(np.zeros((2, 2, 2, 1)))
    with pytest.raises(FormatError) as e:
        decode_grnv(b"GRNX" + good[4:])
    assert e.value.offset == 0
    with pytest.raises(FormatError) as e:
        decode_grnv(good[:4] + struct.pack("<I", 2) + good[8:])
    assert e.value.offset == 4
    with pytest.raises(FormatError) as e:
        decode_grnv(good[:-4])
    assert e.value.offset == len(good) - 4
    with pytest.raises(FormatError) as e:
        decode_grnv(good[:10])
    assert "byte offset" in str(e.value)
    with pytest.raises(ValueError):
        encode_grnv(np.zeros((2, 2, 2)))


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, size=(5, 7, 3)) / 255.0
    write_ppm(tmp_path / "a.ppm", img)
    raw = (tmp_path / "a.ppm").read_bytes()
    assert raw.startswith(b"P6\n7 5\n255\n")
    np.testing.assert_allclose(read_ppm(tmp_path / "a.ppm"), img, atol=1e-12)


def test_ppm_accepts_comments(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6 # made by hand\n2 1\n255\n" + bytes([255, 0, 0, 0, 255, 0]))
    np.testing.assert_array_equal(read_ppm(tmp_path / "c.ppm"), [[[1, 0, 0], [0, 1, 0]]])


def test_ppm_errors(tmp_path):
    (tmp_path / "m.ppm").write_bytes(b"P3\n1 1\n255\n000")
    with pytest.raises(FormatError) as e:
        read_ppm(tmp_path / "m.ppm")
    assert e.value.offset == 0
    (tmp_path / "s.ppm").write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(FormatError) as e:
        read_ppm(tmp_path / "s.ppm")
    assert e.value.offset == 11
    (tmp_path / "d.ppm").write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(FormatError):
        read_ppm(tmp_path / "d.ppm")


def test_pfm_round_trip_with_inf(tmp_path):
    depth = np.random.default_rng(2).uniform(1, 5, size=(4, 6)).astype(np.float32)
    depth[0, 0] = np.inf
    write_pfm(tmp_path / "d.pfm", depth)
    raw = (tmp_path / "d.pfm").read_bytes()
    assert raw.startswith(b"Pf\n6 4\n-1.0\n")
    # rows are stored bottom-up
    first_row = np.frombuffer(raw[len(b"Pf\n6 4\n-1.0\n") :][: 6 * 4], dtype="<f4")
    np.testing.assert_array_equal(first_row, depth[-1])
    np.testing.assert_array_equal(read_pfm(tmp_path / "d.pfm"), depth)


def test_pfm_errors(tmp_path):
    (tmp_path / "a.pfm").write_bytes(b"PF\n1 1\n-1.0\n" + bytes(12))
    with pytest.raises(FormatError) as e:
        read_pfm(tmp_path / "a.pfm")
    assert e.value.offset == 0
    (tmp_path / "b.pfm").write_bytes(b"Pf\n2 2\n-1.0\n" + bytes(3))
    with pytest.raises(FormatError):
        read_pfm(tmp_path / "b.pfm")
