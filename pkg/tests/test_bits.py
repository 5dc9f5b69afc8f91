import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bb84sim.bits import BitString


def test_length_and_indexing():
    b = BitString("1011")
    assert len(b) == b.length == 4
    assert [b[i] for i in range(4)] == [1, 0, 1, 1]
    assert b[-1] == 1
    with pytest.raises(IndexError):
        b[4]
    with pytest.raises(IndexError):
        b[-5]


def test_rejects_non_binary():
    with pytest.raises(ValueError):
        BitString([0, 2])
    with pytest.raises(ValueError):
        BitString("10x")


def test_pack_is_msb_first_and_zero_padded():
    assert BitString("1").pack() == b"\x80"
    assert BitString("101000111").pack() == bytes([0b10100011, 0b10000000])
    assert BitString().pack() == b""


def test_immutable():
    b = BitString("01")
    with pytest.raises(ValueError):
        b.array[0] = 1


def test_mismatches_and_slices():
    a, b = BitString("1111"), BitString("1011")
    assert a.mismatches(b) == 1
    assert a[1:3] == BitString("11")
    assert (a + b) == BitString("11111011")
    with pytest.raises(ValueError):
        a.mismatches(BitString("1"))


@given(st.lists(st.integers(0, 1), max_size=300))
def test_pack_unpack_round_trip(bits):
    b = BitString(bits)
    assert BitString.unpack(b.pack(), len(b)) == b
    assert str(b) == "".join(map(str, bits))


@given(st.binary(max_size=64))
def test_unpack_pack_round_trip_on_whole_bytes(data):
    assert BitString.unpack(data, 8 * len(data)).pack() == data


def test_unpack_rejects_short_buffer():
    with pytest.raises(ValueError):
        BitString.unpack(b"\x00", 9)


def test_array_view_dtype():
    assert BitString("10").array.dtype == np.uint8
