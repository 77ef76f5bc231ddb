import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edgemae.ntf import FormatError, decode_ntf, encode_ntf, read_pgm, write_pgm
from edgemae.rng import Rng


def test_splitmix_reference_values():
    # published splitmix64 outputs
    assert Rng(0).next_u64() == 0xE220A8397B1DCDAF
    r = Rng(1234567)
    assert [r.next_u64() for _ in range(3)] == [6457827717110365317, 3203168211198807973, 9817491932198370423]


def test_uniform_is_top_53_bits():
    a, b = Rng(99), Rng(99)
    assert a.uniform() == (b.next_u64() >> 11) * 2.0 ** -53


@given(st.integers(0, 2**64 - 1))
def test_uniform_range(seed):
    r = Rng(seed)
    for _ in range(20):
        u = r.uniform()
        assert 0.0 <= u < 1.0
        assert 2 <= r.randint(2, 5) <= 5


def test_same_seed_same_stream():
    assert [Rng(5).uniform() for _ in range(1)] == [Rng(5).uniform()]
    a, b = Rng(42), Rng(42)
    assert [a.next_u64() for _ in range(100)] == [b.next_u64() for _ in range(100)]


def test_ntf_layout():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    raw = encode_ntf(arr)
    assert raw[:4] == b"NTF1"
    assert struct.unpack_from("<I", raw, 4) == (2,)
    assert struct.unpack_from("<2I", raw, 8) == (2, 3)
    assert np.frombuffer(raw[16:], dtype="<f4").tolist() == [0, 1, 2, 3, 4, 5]


@settings(max_examples=50)
@given(arrays(np.float32, st.lists(st.integers(1, 5), min_size=1, max_size=4).map(tuple),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_ntf_round_trip_bit_exact(arr):
    back = decode_ntf(encode_ntf(arr))
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


@pytest.mark.parametrize("raw", [b"", b"NTF2\x00\x00\x00\x00", encode_ntf(np.zeros((2, 2)))[:-1]])
def test_ntf_rejects_malformed(raw):
    with pytest.raises(FormatError):
        decode_ntf(raw)


def test_pgm_rounding(tmp_path):
    px = np.array([[0.0, 0.5, 1.0], [0.2, 0.999, 0.001]], dtype=np.float32)
    write_pgm(tmp_path / "p.pgm", px)
    assert (tmp_path / "p.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")
    assert read_pgm(tmp_path / "p.pgm").tolist() == [[0, 128, 255], [51, 255, 0]]
