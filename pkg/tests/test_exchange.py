import numpy as np
import pytest

from layoutforge.exchange import ExchangeFormatError, read_tensor, write_tensor


def test_round_trip_rank2(tmp_path):
    a = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
    p = tmp_path / "t.xamt"
    write_tensor(p, a)
    assert p.stat().st_size == 16 + 8 + 16
    b = read_tensor(p)
    assert b.dtype == np.float32
    assert np.array_equal(a, b)


def test_round_trip_rank3_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((16, 16, 8)).astype(np.float32)
    p = tmp_path / "t.xamt"
    write_tensor(p, a)
    b = read_tensor(p)
    assert a.tobytes() == b.tobytes()


def test_double_round_trip_stable(tmp_path):
    rng = np.random.default_rng(1)
    a = rng.standard_normal((4, 64, 64)).astype(np.float32)
    p1, p2 = tmp_path / "a.xamt", tmp_path / "b.xamt"
    write_tensor(p1, a)
    write_tensor(p2, read_tensor(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_rejects_bad_rank():
    with pytest.raises(ValueError):
        write_tensor("/tmp/never.xamt", np.zeros((2, 2, 2, 2)))
    with pytest.raises(ValueError):
        write_tensor("/tmp/never.xamt", np.zeros(4))


def test_rejects_nonfinite(tmp_path):
    a = np.zeros((2, 2))
    a[0, 0] = np.inf
    with pytest.raises(ValueError):
        write_tensor(tmp_path / "t.xamt", a)


def test_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.xamt"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ExchangeFormatError):
        read_tensor(p)


def test_rejects_truncated_payload(tmp_path):
    p = tmp_path / "t.xamt"
    write_tensor(p, np.ones((3, 3), dtype=np.float32))
    raw = p.read_bytes()
    p.write_bytes(raw[:-4])
    with pytest.raises(ExchangeFormatError):
        read_tensor(p)


def test_rejects_bad_version(tmp_path):
    p = tmp_path / "t.xamt"
    write_tensor(p, np.ones((2, 2), dtype=np.float32))
    raw = bytearray(p.read_bytes())
    raw[4] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(ExchangeFormatError):
        read_tensor(p)
