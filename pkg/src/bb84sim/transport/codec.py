"""Frame format shared by both terminals.

A frame is a 4-byte big-endian payload length, a 1-byte type code, then the
payload.  Bit-carrying payloads start with a 4-byte big-endian bit count
followed by the bits packed MSB-first, the last byte zero-padded.  PHOTONS
packs two bits per photon (value, basis) and counts photons, not bits.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from ..bits import BitString
from ..core import PhotonBatch

PROTOCOL_VERSION = 1
MAX_PAYLOAD = 16 * 1024 * 1024
HEADER = struct.Struct(">IB")
_U32 = struct.Struct(">I")


class ProtocolError(RuntimeError):
    pass


class MsgType(IntEnum):
    HELLO = 1
    CONFIG = 2
    PHOTONS = 3
    BOB_BASES = 4
    ALICE_BASES = 5
    SHARED_BITS = 6
    QBER_REPORT = 7
    DECISION = 8
    USABLE_KEY = 9
    ITER_DONE = 10
    END = 11
    ERROR = 12


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    payload: bytes = b""


def encode_frame(msg: WireMessage) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(msg.payload)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(len(msg.payload), int(msg.msg_type)) + msg.payload


def parse_header(header: bytes) -> tuple[int, MsgType]:
    length, code = HEADER.unpack(header)
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"frame announces {length} bytes, limit is {MAX_PAYLOAD}")
    try:
        return length, MsgType(code)
    except ValueError:
        raise ProtocolError(f"unknown message type code {code}") from None


def decode_frame(frame: bytes) -> WireMessage:
    if len(frame) < HEADER.size:
        raise ProtocolError("truncated frame header")
    length, msg_type = parse_header(frame[:HEADER.size])
    if len(frame) != HEADER.size + length:
        raise ProtocolError(f"frame length mismatch: header says {length}, "
                            f"got {len(frame) - HEADER.size}")
    return WireMessage(msg_type, bytes(frame[HEADER.size:]))


# -- payload helpers -------------------------------------------------------

def encode_bits(bits: BitString) -> bytes:
    return _U32.pack(len(bits)) + bits.pack()


def decode_bits(payload: bytes, offset: int = 0) -> tuple[BitString, int]:
    """Returns the bit string and the offset just past it."""
    if len(payload) < offset + 4:
        raise ProtocolError("truncated bit count")
    (n,) = _U32.unpack_from(payload, offset)
    end = offset + 4 + (n + 7) // 8
    if len(payload) < end:
        raise ProtocolError(f"payload too short for {n} bits")
    return BitString.unpack(payload[offset + 4:end], n), end


def encode_photons(photons: PhotonBatch) -> bytes:
    interleaved = np.empty(2 * len(photons), dtype=np.uint8)
    interleaved[0::2] = photons.bits
    interleaved[1::2] = photons.bases
    return _U32.pack(len(photons)) + np.packbits(interleaved).tobytes()


def decode_photons(payload: bytes) -> PhotonBatch:
    if len(payload) < 4:
        raise ProtocolError("truncated photon count")
    (n,) = _U32.unpack_from(payload, 0)
    if len(payload) != 4 + (2 * n + 7) // 8:
        raise ProtocolError(f"PHOTONS payload size does not match {n} photons")
    flat = np.unpackbits(np.frombuffer(payload, dtype=np.uint8, offset=4), count=2 * n)
    return PhotonBatch(flat[0::2].copy(), flat[1::2].copy())


def encode_shared(bits: BitString, positions: Optional[np.ndarray]) -> bytes:
    """SHARED_BITS: the disclosed bits, then a position list (empty for a prefix)."""
    pos = np.asarray(positions if positions is not None else (), dtype=">u4")
    return encode_bits(bits) + _U32.pack(pos.size) + pos.tobytes()


def decode_shared(payload: bytes) -> tuple[BitString, Optional[np.ndarray]]:
    bits, off = decode_bits(payload)
    if len(payload) < off + 4:
        raise ProtocolError("truncated position count")
    (k,) = _U32.unpack_from(payload, off)
    if len(payload) != off + 4 + 4 * k:
        raise ProtocolError("SHARED_BITS position list has the wrong size")
    if k == 0:
        return bits, None
    return bits, np.frombuffer(payload, dtype=">u4", count=k, offset=off + 4).astype(np.int64)


def encode_u32s(*values: int) -> bytes:
    return b"".join(_U32.pack(v) for v in values)


def decode_u32s(payload: bytes, count: int) -> tuple[int, ...]:
    if len(payload) != 4 * count:
        raise ProtocolError(f"expected {count} 32-bit fields")
    return struct.unpack(f">{count}I", payload)


_DECISION_CODES = {False: 0, True: 1, None: 0xFF}


def encode_decision(decision: Optional[bool]) -> bytes:
    return bytes([_DECISION_CODES[decision]])


def decode_decision(payload: bytes) -> Optional[bool]:
    for value, code in _DECISION_CODES.items():
        if payload == bytes([code]):
            return value
    raise ProtocolError(f"bad DECISION payload {payload!r}")


def encode_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_json(payload: bytes):
    try:
        return json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"bad JSON payload: {exc}") from exc
