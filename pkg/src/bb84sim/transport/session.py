"""Two-terminal protocol: handshake, per-iteration message flow, and the
TCP / loopback entry points."""
from __future__ import annotations

import dataclasses
import logging
import socket
import threading
import time
from typing import Optional

import numpy as np

from .. import core
from .. import randomness as rnd
from ..config import ConfigError, SimConfig
from ..detection import decide
from ..reporting import IterationRecord
from ..runner import acquire, attack_schedule, make_record
from .channel import Channel, ChannelClosed, LoopbackChannel, RemoteError, TcpChannel, loopback_pair
from .codec import (PROTOCOL_VERSION, MsgType, ProtocolError, decode_bits, decode_decision,
                    decode_json, decode_photons, decode_shared, decode_u32s, encode_bits,
                    encode_decision, encode_json, encode_photons, encode_shared, encode_u32s)

log = logging.getLogger(__name__)

SERVER, CLIENT = "server", "client"
ALICE, BOB = "alice", "bob"


class SessionError(RuntimeError):
    def __init__(self, message: str, iteration: Optional[int] = None):
        where = f" (iteration {iteration})" if iteration is not None else ""
        super().__init__(message + where)
        self.iteration = iteration


class HandshakeError(SessionError):
    pass


# -- handshake -------------------------------------------------------------

def server_handshake(channel: Channel, config: SimConfig) -> None:
    hello = channel.recv(MsgType.HELLO)
    version = hello.payload[0] if len(hello.payload) == 1 else None
    if version != PROTOCOL_VERSION:
        channel.send(MsgType.ERROR, f"unsupported protocol version {version}".encode())
        channel.close()
        raise HandshakeError(f"client speaks protocol version {version}, expected {PROTOCOL_VERSION}")
    channel.send(MsgType.HELLO, bytes([PROTOCOL_VERSION]))
    channel.send(MsgType.CONFIG, encode_json(config.to_dict()))


def client_handshake(channel: Channel, version: int = PROTOCOL_VERSION) -> SimConfig:
    channel.send(MsgType.HELLO, bytes([version]))
    try:
        channel.recv(MsgType.HELLO)
        msg = channel.recv(MsgType.CONFIG)
    except RemoteError as exc:
        raise HandshakeError(f"server rejected handshake: {exc}") from exc
    try:
        return SimConfig.from_dict(decode_json(msg.payload))
    except ConfigError as exc:
        raise HandshakeError(f"invalid CONFIG from server: {exc}") from exc


# -- per-iteration peers ---------------------------------------------------

def _record_json(rec: IterationRecord) -> bytes:
    return encode_json(dataclasses.asdict(rec))


def _check_agreement(mine: IterationRecord, theirs: dict, i: int) -> None:
    for key in ("sifted_len", "shared_len", "qber_est", "decided_attacked"):
        if theirs.get(key) != getattr(mine, key):
            raise SessionError(f"peers disagree on {key}: {getattr(mine, key)!r} vs {theirs.get(key)!r}", i)


class AlicePeer:
    """Sender side: prepares photons, runs the simulated quantum channel
    (Eve, depolarization, source/detector timing) and discloses shared bits."""

    def __init__(self, cfg: SimConfig, channel: Channel, is_server: bool):
        self.cfg = cfg
        self.ch = channel
        self.is_server = is_server
        self.streams = cfg.streams()
        self.schedule = attack_schedule(cfg)

    def run_iteration(self, i: int) -> IterationRecord:
        cfg, ch, streams = self.cfg, self.ch, self.streams
        n = cfg.photons
        attacked = self.schedule.is_attacked(i)
        data = streams.get(rnd.ALICE_DATA, i).next_bits(n)
        bases = streams.get(rnd.ALICE_BASES, i).next_bits(n)
        photons = core.prepare(data, bases)
        if attacked:
            photons = core.eve_intercept(photons, cfg.epsilon,
                                         streams.get(rnd.EVE_BASES, i), streams.get(rnd.EVE_COINS, i))
        photons = core.depolarize(photons, cfg.p_depol, streams.get(rnd.DEPOLARIZATION, i))
        ch.send(MsgType.PHOTONS, encode_photons(photons))

        bob_bases, _ = decode_bits(ch.recv(MsgType.BOB_BASES).payload)
        if len(bob_bases) != n:
            raise SessionError(f"BOB_BASES carries {len(bob_bases)} bits, expected {n}", i)
        ch.send(MsgType.ALICE_BASES, encode_bits(bases))

        kept = np.flatnonzero(bases.array == bob_bases.array)
        sifted = data[kept]
        usable = None
        if len(sifted):
            rng = streams.get(rnd.SHARING, i) if cfg.shared_selection == "random" else None
            pos = core.shared_positions(len(sifted), cfg.sharing_rate, rng)
            shared, usable = core.split_key(sifted, pos)
            ch.send(MsgType.SHARED_BITS, encode_shared(shared, pos if rng is not None else None))
        else:
            ch.send(MsgType.SHARED_BITS, encode_shared(sifted, None))

        mismatches, shared_len = decode_u32s(ch.recv(MsgType.QBER_REPORT).payload, 2)
        qber_est = mismatches / shared_len if shared_len else None
        decision = _exchange_decision(ch, self.is_server, qber_est, cfg.threshold, i)

        qber_rem = None
        if cfg.research:
            bob_usable, _ = decode_bits(ch.recv(MsgType.USABLE_KEY).payload)
            if usable is not None and len(usable):
                if len(bob_usable) != len(usable):
                    raise SessionError("USABLE_KEY length differs from Alice's usable key", i)
                qber_rem = usable.mismatches(bob_usable) / len(usable)

        acq = acquire(cfg, streams, i)
        rec = make_record(i, attacked, len(sifted), shared_len, qber_est, qber_rem, acq, cfg.threshold)
        assert rec.decided_attacked == decision
        ch.send(MsgType.ITER_DONE, _record_json(rec))
        _check_agreement(rec, decode_json(ch.recv(MsgType.ITER_DONE).payload), i)
        return rec


class BobPeer:
    """Receiver side: measures the arriving photons and reports errors on
    the shared bits."""

    def __init__(self, cfg: SimConfig, channel: Channel, is_server: bool):
        self.cfg = cfg
        self.ch = channel
        self.is_server = is_server
        self.streams = cfg.streams()

    def run_iteration(self, i: int) -> IterationRecord:
        cfg, ch, streams = self.cfg, self.ch, self.streams
        n = cfg.photons
        photons = decode_photons(ch.recv(MsgType.PHOTONS).payload)
        if len(photons) != n:
            raise SessionError(f"PHOTONS carries {len(photons)} photons, expected {n}", i)
        bases = streams.get(rnd.BOB_BASES, i).next_bits(n)
        measured = core.measure(photons, bases, streams.get(rnd.MEASUREMENT, i))
        ch.send(MsgType.BOB_BASES, encode_bits(bases))

        alice_bases, _ = decode_bits(ch.recv(MsgType.ALICE_BASES).payload)
        if len(alice_bases) != n:
            raise SessionError(f"ALICE_BASES carries {len(alice_bases)} bits, expected {n}", i)
        kept = np.flatnonzero(alice_bases.array == bases.array)
        sifted = measured[kept]

        alice_shared, pos = decode_shared(ch.recv(MsgType.SHARED_BITS).payload)
        usable = sifted
        mismatches = 0
        if len(sifted):
            expected = core.shared_count(len(sifted), cfg.sharing_rate)
            if len(alice_shared) != expected:
                raise SessionError(f"SHARED_BITS carries {len(alice_shared)} bits, expected {expected}", i)
            if pos is None:
                pos = np.arange(len(alice_shared))
            mine, usable = core.split_key(sifted, pos)
            mismatches = mine.mismatches(alice_shared)
        ch.send(MsgType.QBER_REPORT, encode_u32s(mismatches, len(alice_shared)))
        qber_est = mismatches / len(alice_shared) if len(alice_shared) else None
        _exchange_decision(ch, self.is_server, qber_est, cfg.threshold, i)

        if cfg.research:
            ch.send(MsgType.USABLE_KEY, encode_bits(usable))

        rec = IterationRecord(**decode_json(ch.recv(MsgType.ITER_DONE).payload))
        own = {"sifted_len": len(sifted), "shared_len": len(alice_shared), "qber_est": qber_est,
               "decided_attacked": decide(qber_est, cfg.threshold)}
        _check_agreement(rec, own, i)
        ch.send(MsgType.ITER_DONE, encode_json(own))
        return rec


def _exchange_decision(ch: Channel, is_server: bool, qber_est, threshold: float, i: int):
    mine = decide(qber_est, threshold)
    if is_server:
        ch.send(MsgType.DECISION, encode_decision(mine))
        return mine
    theirs = decode_decision(ch.recv(MsgType.DECISION).payload)
    if theirs != mine:
        raise SessionError(f"server decision {theirs} differs from local decision {mine}", i)
    return theirs


# -- sessions --------------------------------------------------------------

class Session:
    """A connected, handshaken terminal.  Confined to one thread."""

    def __init__(self, channel: Channel, config: SimConfig, role: str):
        self.channel = channel
        self.config = config
        self.role = role
        is_server = role == SERVER
        alice_is_server = config.server_role == ALICE
        self.protocol_role = ALICE if is_server == alice_is_server else BOB
        peer_cls = AlicePeer if self.protocol_role == ALICE else BobPeer
        self.peer = peer_cls(config, channel, is_server)

    def run_iteration_networked(self, i: int) -> IterationRecord:
        return self.peer.run_iteration(i)

    def run(self) -> list[IterationRecord]:
        records = []
        i = None
        try:
            for i in range(self.config.iterations):
                records.append(self.run_iteration_networked(i))
            if self.role == SERVER:
                self.channel.send(MsgType.END)
            else:
                self.channel.recv(MsgType.END)
        except (ProtocolError, SessionError, ValueError) as exc:
            self._abort(str(exc))
            if isinstance(exc, SessionError):
                raise
            raise SessionError(str(exc), i) from exc
        except (RemoteError, ChannelClosed, OSError) as exc:
            self.channel.close()
            raise SessionError(f"{type(exc).__name__}: {exc}", i) from exc
        finally:
            self.channel.close()
        return records

    def _abort(self, message: str) -> None:
        if not self.channel.closed:
            try:
                self.channel.send(MsgType.ERROR, message.encode("utf-8", "replace"))
            except (OSError, ChannelClosed):
                pass
        self.channel.close()

    def close(self) -> None:
        self.channel.close()


class Listener:
    """A bound server socket that accepts exactly one client."""

    def __init__(self, bind_address: str, port: int):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.sock.bind((bind_address, port))
        except OSError as exc:
            self.sock.close()
            raise SessionError(f"cannot bind {bind_address}:{port}: {exc}") from exc
        self.sock.listen(1)

    @property
    def port(self) -> int:
        return self.sock.getsockname()[1]

    def accept(self, config: SimConfig, accept_timeout: Optional[float] = None) -> Session:
        self.sock.settimeout(accept_timeout)
        try:
            conn, peer = self.sock.accept()
        finally:
            self.sock.close()  # single-session contract: later clients are refused
        log.info("client connected from %s:%d", *peer[:2])
        channel = TcpChannel(conn, config.timeout_s)
        try:
            server_handshake(channel, config)
        except (ProtocolError, RemoteError, ChannelClosed, OSError) as exc:
            channel.close()
            raise HandshakeError(f"handshake failed: {exc}") from exc
        return Session(channel, config, SERVER)

    def close(self) -> None:
        self.sock.close()


def serve(bind_address: str, port: int, config: SimConfig,
          accept_timeout: Optional[float] = None) -> Session:
    config.validate()
    return Listener(bind_address, port).accept(config, accept_timeout)


def connect(server_address: str, port: int, retries: int = 3, delay_s: float = 1.0,
            timeout_s: float = 30.0) -> Session:
    last = None
    for attempt in range(1, retries + 1):
        try:
            sock = socket.create_connection((server_address, port), timeout=timeout_s)
            break
        except OSError as exc:
            last = exc
            log.info("connect attempt %d/%d to %s:%d failed: %s", attempt, retries,
                     server_address, port, exc)
            if attempt < retries:
                time.sleep(delay_s)
    else:
        raise SessionError(f"could not connect to {server_address}:{port} after {retries} attempts: {last}")
    channel = TcpChannel(sock, timeout_s)
    config = client_handshake(channel)
    channel.sock.settimeout(config.timeout_s)
    return Session(channel, config, CLIENT)


# -- in-process loopback ---------------------------------------------------

def loopback_channel(config: SimConfig) -> tuple[LoopbackChannel, LoopbackChannel]:
    """Paired in-process endpoints (server end, client end)."""
    return loopback_pair(config.timeout_s)


def run_pair(server_session_factory, client_session_factory):
    """Run two session factories on separate threads; returns both record lists."""
    results: dict = {}
    errors: dict = {}

    def work(name, factory):
        try:
            session = factory()
            results[name] = session.run()
        except BaseException as exc:  # re-raised on the caller's thread
            errors[name] = exc

    threads = [threading.Thread(target=work, args=(SERVER, server_session_factory), daemon=True),
               threading.Thread(target=work, args=(CLIENT, client_session_factory), daemon=True)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors.get(SERVER) or errors[CLIENT]
    return results[SERVER], results[CLIENT]


def run_loopback(config: SimConfig, channels=None):
    """Full two-terminal run over an in-memory channel.

    Returns (server records, client records, (server channel, client channel)).
    """
    config.validate()
    server_ch, client_ch = channels or loopback_channel(config)

    def server():
        server_handshake(server_ch, config)
        return Session(server_ch, config, SERVER)

    def client():
        return Session(client_ch, client_handshake(client_ch), CLIENT)

    server_records, client_records = run_pair(server, client)
    return server_records, client_records, (server_ch, client_ch)
