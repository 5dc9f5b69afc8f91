import socket
import struct
import threading
import time

import pytest

from bb84sim.config import SimConfig
from bb84sim.runner import run
from bb84sim.transport import (ChannelClosed, HandshakeError, Listener, MsgType, ProtocolError,
                               SessionError, TcpChannel, connect, loopback_pair, run_loopback)
from bb84sim.transport.codec import decode_frame, decode_u32s
from bb84sim.transport.session import CLIENT, SERVER, Session, client_handshake, run_pair, server_handshake

KEY_FIELDS = ("sifted_len", "qber_est", "decided_attacked")


def tcp_run(cfg):
    """serve + connect on an ephemeral localhost port; returns both sessions' records and channels."""
    listener = Listener("127.0.0.1", 0)
    port = listener.port
    sessions = {}

    def server():
        sessions[SERVER] = listener.accept(cfg, accept_timeout=10)
        return sessions[SERVER]

    def client():
        sessions[CLIENT] = connect("127.0.0.1", port, retries=3, delay_s=0.1, timeout_s=10)
        return sessions[CLIENT]

    s_rec, c_rec = run_pair(server, client)
    return s_rec, c_rec, sessions


def frame_types(frames):
    return [decode_frame(f).msg_type for f in frames]


# -- loopback channel -----------------------------------------------------------

def test_loopback_delivers_in_order_and_end_closes_both():
    a, b = loopback_pair(timeout=1)
    a.send(MsgType.PHOTONS, b"x")
    a.send(MsgType.BOB_BASES, b"yz")
    assert b.recv().payload == b"x"
    assert b.recv(MsgType.BOB_BASES).payload == b"yz"
    a.send(MsgType.END)
    assert a.closed
    assert b.recv(MsgType.END).msg_type == MsgType.END
    assert b.closed
    with pytest.raises(ChannelClosed):
        a.send(MsgType.PHOTONS)


def test_out_of_order_message_is_protocol_error():
    a, b = loopback_pair(timeout=1)
    a.send(MsgType.ALICE_BASES, b"")
    with pytest.raises(ProtocolError):
        b.recv(MsgType.BOB_BASES)


# -- sessions -------------------------------------------------------------------

def test_loopback_equals_single_process():
    cfg = SimConfig(photons=1000, iterations=10, seed=1234, eve=True, epsilon=0.5, p_depol=0.05)
    expected, _ = run(cfg)
    server, client, _ = run_loopback(cfg)
    assert server == expected and client == expected


def test_tcp_equals_single_process_and_config_round_trip():
    cfg = SimConfig(photons=500, iterations=4, seed=77, p_depol=0.1, research=True,
                    weak_pulse=True, detector_efficiency=True, eta_d=0.3, meta={"note": "x"})
    expected, _ = run(cfg)
    s_rec, c_rec, sessions = tcp_run(cfg)
    assert s_rec == expected and c_rec == expected
    assert sessions[CLIENT].config == cfg
    assert sessions[SERVER].protocol_role == "alice" and sessions[CLIENT].protocol_role == "bob"


def test_roles_can_be_swapped():
    cfg = SimConfig(photons=400, iterations=3, seed=5, server_role="bob", eve=True)
    expected, _ = run(cfg)
    server, client, (s_ch, c_ch) = run_loopback(cfg)
    assert server == expected and client == expected
    # the client is now Alice and sends the photons
    assert MsgType.PHOTONS in frame_types(c_ch.sent_frames)
    assert MsgType.PHOTONS not in frame_types(s_ch.sent_frames)
    assert MsgType.DECISION in frame_types(s_ch.sent_frames)


def test_loopback_and_tcp_carry_identical_bytes():
    cfg = SimConfig(photons=300, iterations=2, seed=9, p_depol=0.2, research=True)
    _, _, (s_loop, c_loop) = run_loopback(cfg)
    _, _, sessions = tcp_run(cfg)
    assert sessions[SERVER].channel.sent_frames == s_loop.sent_frames
    assert sessions[CLIENT].channel.sent_frames == c_loop.sent_frames


def test_message_sequence_and_research_flag():
    cfg = SimConfig(photons=200, iterations=2, seed=3)
    _, _, (s_ch, c_ch) = run_loopback(cfg)
    per_iter_alice = [MsgType.PHOTONS, MsgType.ALICE_BASES, MsgType.SHARED_BITS, MsgType.DECISION,
                      MsgType.ITER_DONE]
    assert frame_types(s_ch.sent_frames) == [MsgType.HELLO, MsgType.CONFIG] + per_iter_alice * 2 + [MsgType.END]
    assert frame_types(c_ch.sent_frames) == [MsgType.HELLO] + [MsgType.BOB_BASES, MsgType.QBER_REPORT,
                                                               MsgType.ITER_DONE] * 2
    assert MsgType.USABLE_KEY not in frame_types(s_ch.sent_frames + c_ch.sent_frames)
    _, _, (_, c_ch) = run_loopback(cfg.replace(research=True))
    assert MsgType.USABLE_KEY in frame_types(c_ch.sent_frames)


def test_noiseless_reports_zero_mismatches():
    cfg = SimConfig(photons=1000, iterations=5, seed=21)
    _, _, (_, c_ch) = run_loopback(cfg)
    reports = [decode_frame(f) for f in c_ch.sent_frames if decode_frame(f).msg_type == MsgType.QBER_REPORT]
    assert len(reports) == 5
    assert all(decode_u32s(m.payload, 2)[0] == 0 for m in reports)


def test_bob_never_receives_alice_raw_data():
    cfg = SimConfig(photons=2000, iterations=3, seed=31, eve=True, p_depol=0.3, research=True)
    from bb84sim import randomness as rnd
    _, _, (s_ch, c_ch) = run_loopback(cfg)
    allowed = {MsgType.HELLO, MsgType.CONFIG, MsgType.PHOTONS, MsgType.ALICE_BASES, MsgType.SHARED_BITS,
               MsgType.DECISION, MsgType.ITER_DONE, MsgType.END}
    assert set(frame_types(c_ch.received_frames)) <= allowed
    streams = cfg.streams()
    for i in range(3):
        raw = streams.get(rnd.ALICE_DATA, i).next_bits(cfg.photons).pack()
        assert not any(raw in f for f in c_ch.received_frames)


def test_second_client_refused():
    cfg = SimConfig(photons=100, iterations=1, seed=1)
    listener = Listener("127.0.0.1", 0)
    port = listener.port
    done = threading.Event()
    result = {}

    def server():
        session = listener.accept(cfg, accept_timeout=10)
        done.wait(5)
        result["records"] = session.run()

    t = threading.Thread(target=server, daemon=True)
    t.start()
    first = connect("127.0.0.1", port, retries=3, delay_s=0.1, timeout_s=5)
    with pytest.raises(OSError):
        socket.create_connection(("127.0.0.1", port), timeout=2)
    done.set()
    first.run()
    t.join(5)
    assert len(result["records"]) == 1


def test_version_mismatch_gets_error_frame():
    cfg = SimConfig(photons=100, iterations=1)
    listener = Listener("127.0.0.1", 0)
    errors = {}

    def server():
        try:
            listener.accept(cfg, accept_timeout=10)
        except HandshakeError as exc:
            errors["server"] = exc

    t = threading.Thread(target=server, daemon=True)
    t.start()
    channel = TcpChannel(socket.create_connection(("127.0.0.1", listener.port), timeout=5), 5)
    with pytest.raises(HandshakeError):
        client_handshake(channel, version=2)
    t.join(5)
    assert "server" in errors
    assert frame_types(channel.received_frames) == [MsgType.ERROR]


def test_connect_without_server_fails_after_retries():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    start = time.monotonic()
    with pytest.raises(SessionError, match="after 3 attempts"):
        connect("127.0.0.1", port, retries=3, delay_s=0.2, timeout_s=1)
    assert time.monotonic() - start >= 0.4


def test_bind_failure():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    s.listen(1)
    try:
        with pytest.raises(SessionError):
            Listener("127.0.0.1", s.getsockname()[1])
    finally:
        s.close()


def test_oversized_frame_over_tcp_aborts_session():
    cfg = SimConfig(photons=100, iterations=1)
    listener = Listener("127.0.0.1", 0)
    result = {}

    def client():
        sock = socket.create_connection(("127.0.0.1", listener.port), timeout=5)
        ch = TcpChannel(sock, 5)
        client_handshake(ch)
        # a frame that announces 32 MiB
        sock.sendall(struct.pack(">IB", 32 * 1024 * 1024, MsgType.BOB_BASES))
        try:
            result["reply"] = ch.recv()
        except Exception as exc:
            result["reply"] = exc

    t = threading.Thread(target=client, daemon=True)
    t.start()
    session = listener.accept(cfg, accept_timeout=10)
    with pytest.raises(SessionError, match="limit"):
        session.run()
    t.join(5)


def test_peer_disconnect_reports_iteration():
    cfg = SimConfig(photons=100, iterations=3)
    server_ch, client_ch = loopback_pair(timeout=2)

    def client():
        client_handshake(client_ch)
        client_ch.recv(MsgType.PHOTONS)
        client_ch.close()

    t = threading.Thread(target=client, daemon=True)
    t.start()
    server_handshake(server_ch, cfg)
    with pytest.raises(SessionError) as info:
        Session(server_ch, cfg, SERVER).run()
    assert info.value.iteration == 0
    t.join(2)
