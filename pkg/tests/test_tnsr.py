"""TNSR file format: byte layout and round trips."""

import struct

import numpy as np
import numpy.testing as npt
import pytest

from gatedfusion.tnsr import TnsrFormatError, read_tnsr, write_tnsr


def test_round_trip_float64(tmp_path, rng):
    a = rng.normal(size=(3, 4, 2))
    p = tmp_path / "a.tnsr"
    write_tnsr(p, a)
    back = read_tnsr(p)
    assert back.dtype == np.dtype("<f8")
    npt.assert_array_equal(back, a)


def test_round_trip_float32(tmp_path, rng):
    a = rng.normal(size=(5,)).astype(np.float32)
    p = tmp_path / "a.tnsr"
    write_tnsr(p, a)
    back = read_tnsr(p)
    assert back.dtype == np.dtype("<f4")
    npt.assert_array_equal(back, a)


def test_header_bytes(tmp_path):
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    p = tmp_path / "a.tnsr"
    write_tnsr(p, a)
    raw = p.read_bytes()
    assert raw[:4] == b"TNSR"
    assert raw[4] == 1  # version
    assert raw[5] == 1  # float64
    assert raw[6:8] == b"\x00\x00"
    (ndim,) = struct.unpack_from("<I", raw, 8)
    assert ndim == 2
    assert struct.unpack_from("<2Q", raw, 12) == (2, 2)
    payload = np.frombuffer(raw, dtype="<f8", offset=28)
    npt.assert_array_equal(payload, [1.0, 2.0, 3.0, 4.0])  # row-major


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk.tnsr"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(TnsrFormatError, match="magic"):
        read_tnsr(p)


def test_truncated_payload_rejected(tmp_path):
    a = np.zeros((4, 4))
    p = tmp_path / "a.tnsr"
    write_tnsr(p, a)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(TnsrFormatError, match="payload"):
        read_tnsr(p)
