"""Fixed-length bit strings backed by numpy arrays."""
from __future__ import annotations

from typing import Iterable, Union

import numpy as np


class BitString:
    """An immutable sequence of bits with exact length.

    Bits are stored unpacked (one ``uint8`` per bit, values 0/1).  ``pack``
    produces MSB-first bytes with the final partial byte zero-padded.
    """

    __slots__ = ("_bits",)

    def __init__(self, bits: Union[Iterable[int], np.ndarray, str] = ()):
        if isinstance(bits, str):
            if any(c not in "01" for c in bits):
                raise ValueError(f"not a binary string: {bits!r}")
            arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
        else:
            arr = np.asarray(bits if isinstance(bits, np.ndarray) else list(bits))
            if arr.size and not np.isin(arr, (0, 1)).all():
                raise ValueError("bit values must be 0 or 1")
            arr = arr.astype(np.uint8)
        arr = np.array(arr, dtype=np.uint8, copy=True).reshape(-1)
        arr.flags.writeable = False
        self._bits = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "BitString":
        # trusted fast path: arr already holds 0/1 values
        obj = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.uint8).reshape(-1)
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        obj._bits = arr
        return obj

    @classmethod
    def unpack(cls, data: bytes, length: int) -> "BitString":
        if length < 0 or (length + 7) // 8 > len(data):
            raise ValueError(f"{len(data)} bytes cannot hold {length} bits")
        raw = np.frombuffer(data, dtype=np.uint8, count=(length + 7) // 8)
        return cls._wrap(np.unpackbits(raw, count=length))

    def pack(self) -> bytes:
        return np.packbits(self._bits).tobytes()

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the bits as a uint8 array."""
        return self._bits

    @property
    def length(self) -> int:
        return int(self._bits.size)

    def __len__(self) -> int:
        return int(self._bits.size)

    def __getitem__(self, key):
        if isinstance(key, slice):
            return BitString._wrap(self._bits[key])
        if isinstance(key, (np.ndarray, list)):
            return BitString._wrap(self._bits[np.asarray(key)])
        n = len(self)
        idx = int(key)
        if not -n <= idx < n:
            raise IndexError(f"bit index {idx} out of range for length {n}")
        return int(self._bits[idx])

    def __iter__(self):
        return (int(b) for b in self._bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitString):
            return NotImplemented
        return np.array_equal(self._bits, other._bits)

    def __hash__(self) -> int:
        return hash((len(self), self.pack()))

    def __str__(self) -> str:
        return (self._bits + ord("0")).tobytes().decode("ascii")

    def __repr__(self) -> str:
        s = str(self)
        if len(s) > 64:
            s = s[:61] + "..."
        return f"BitString('{s}', length={len(self)})"

    def count(self) -> int:
        """Number of one bits."""
        return int(self._bits.sum(dtype=np.int64))

    def mismatches(self, other: "BitString") -> int:
        if len(self) != len(other):
            raise ValueError(f"length mismatch: {len(self)} != {len(other)}")
        return int(np.count_nonzero(self._bits != other._bits))

    def __add__(self, other: "BitString") -> "BitString":
        return BitString._wrap(np.concatenate([self._bits, other._bits]))
