"""Frame channels: a TCP socket and an in-process loopback pair.

Both carry identical frame bytes; the session code cannot tell them apart.
"""
from __future__ import annotations

import queue
import socket
from typing import Optional

from .codec import HEADER, MsgType, ProtocolError, WireMessage, decode_frame, encode_frame, parse_header


class ChannelClosed(ConnectionError):
    pass


class RemoteError(RuntimeError):
    """The peer sent an ERROR frame."""


class Channel:
    """Base class.  Subclasses move whole frames; this layer encodes,
    checks message order and keeps a capture of every frame."""

    def __init__(self):
        self.closed = False
        self.sent_frames: list[bytes] = []
        self.received_frames: list[bytes] = []

    def send(self, msg_type: MsgType, payload: bytes = b"") -> None:
        if self.closed:
            raise ChannelClosed("channel is closed")
        frame = encode_frame(WireMessage(msg_type, payload))
        self._send_frame(frame)
        self.sent_frames.append(frame)
        if msg_type == MsgType.END:
            self.close()

    def recv(self, *expected: MsgType) -> WireMessage:
        if self.closed:
            raise ChannelClosed("channel is closed")
        frame = self._recv_frame()
        self.received_frames.append(frame)
        msg = decode_frame(frame)
        if msg.msg_type == MsgType.ERROR and MsgType.ERROR not in expected:
            self.close()
            raise RemoteError(msg.payload.decode("utf-8", "replace"))
        if msg.msg_type == MsgType.END:
            self.close()
        if expected and msg.msg_type not in expected:
            names = "/".join(t.name for t in expected)
            raise ProtocolError(f"expected {names}, received {msg.msg_type.name}")
        return msg

    def close(self) -> None:
        self.closed = True

    def _send_frame(self, frame: bytes) -> None:
        raise NotImplementedError

    def _recv_frame(self) -> bytes:
        raise NotImplementedError


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket, timeout: Optional[float] = 30.0):
        super().__init__()
        self.sock = sock
        sock.settimeout(timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _send_frame(self, frame: bytes) -> None:
        self.sock.sendall(frame)

    def _recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.sock.recv(min(n - len(buf), 1 << 20))
            if not chunk:
                raise ChannelClosed("peer closed the connection")
            buf += chunk
        return bytes(buf)

    def _recv_frame(self) -> bytes:
        header = self._recv_exact(HEADER.size)
        length, _ = parse_header(header)  # rejects oversize frames before reading them
        return header + self._recv_exact(length)

    def close(self) -> None:
        if not self.closed:
            super().close()
            try:
                self.sock.close()
            except OSError:
                pass


_CLOSED = object()


class LoopbackChannel(Channel):
    """One end of an in-memory duplex pipe; build pairs with :func:`loopback_pair`."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: Optional[float] = 30.0):
        super().__init__()
        self._inbox = inbox
        self._outbox = outbox
        self.timeout = timeout

    def _send_frame(self, frame: bytes) -> None:
        self._outbox.put(bytes(frame))

    def _recv_frame(self) -> bytes:
        try:
            frame = self._inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise TimeoutError("timed out waiting for a frame") from None
        if frame is _CLOSED:
            self.closed = True
            raise ChannelClosed("peer closed the channel")
        if len(frame) < HEADER.size:
            raise ProtocolError("truncated frame header")
        parse_header(frame[:HEADER.size])
        return frame

    def close(self) -> None:
        if not self.closed:
            super().close()
            self._outbox.put(_CLOSED)


def loopback_pair(timeout: Optional[float] = 30.0) -> tuple[LoopbackChannel, LoopbackChannel]:
    a_to_b: queue.Queue = queue.Queue()
    b_to_a: queue.Queue = queue.Queue()
    return LoopbackChannel(b_to_a, a_to_b, timeout), LoopbackChannel(a_to_b, b_to_a, timeout)
