"""Two-terminal execution over TCP or an in-process loopback channel."""
from .channel import ChannelClosed, LoopbackChannel, RemoteError, TcpChannel, loopback_pair
from .codec import MAX_PAYLOAD, PROTOCOL_VERSION, MsgType, ProtocolError, WireMessage, decode_frame, encode_frame
from .session import (HandshakeError, Listener, Session, SessionError, connect, loopback_channel,
                      run_loopback, serve)

__all__ = [
    "ChannelClosed", "HandshakeError", "Listener", "LoopbackChannel", "MAX_PAYLOAD", "MsgType",
    "PROTOCOL_VERSION", "ProtocolError", "RemoteError", "Session", "SessionError", "TcpChannel",
    "WireMessage", "connect", "decode_frame", "encode_frame", "loopback_channel", "loopback_pair",
    "run_loopback", "serve",
]
