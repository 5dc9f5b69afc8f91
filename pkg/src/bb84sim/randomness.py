"""Random bit sources: seeded PRNG substreams, OS entropy, and a remote QRNG."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import urllib.error
import urllib.parse
import urllib.request
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Union

import numpy as np

from .bits import BitString

log = logging.getLogger(__name__)

_HEX = "0123456789abcdefABCDEF"
_TWO53 = float(2**53)
SEED_MAX = 2**64 - 1

# Consumer labels.  Each one gets an independent substream per iteration.
ALICE_DATA = "alice-data"
ALICE_BASES = "alice-bases"
BOB_BASES = "bob-bases"
EVE_BASES = "eve-bases"
EVE_COINS = "eve-coins"
DEPOLARIZATION = "depolarization-coins"
MEASUREMENT = "measurement-coins"
DETECTION = "detection-coins"
SHARING = "sharing"


class SourceError(RuntimeError):
    """A random source failed to deliver bits."""


class HexParseError(ValueError):
    def __init__(self, text: str, index: int):
        super().__init__(f"invalid hex digit {text[index]!r} at index {index}")
        self.index = index


# -- source kinds ----------------------------------------------------------

@dataclass(frozen=True)
class SeededDeterministic:
    seed: int


@dataclass(frozen=True)
class OsEntropy:
    pass


@dataclass(frozen=True)
class RemoteQrng:
    endpoint: str
    batch_size: int = 1024
    timeout: float = 10.0


RngSourceKind = Union[SeededDeterministic, OsEntropy, RemoteQrng]


# -- sources ---------------------------------------------------------------

class RngSource(ABC):
    """Anything that yields fair random bits.

    Subclasses must implement ``next_bits``; the numeric draws below are
    derived from bits and may be overridden with faster native samplers.
    """

    @abstractmethod
    def next_bits(self, n: int) -> BitString:
        ...

    def uniform(self, n: int) -> np.ndarray:
        """``n`` floats in [0, 1) with 53 bits of resolution each."""
        if n == 0:
            return np.empty(0)
        bits = self.next_bits(53 * n).array.reshape(n, 53).astype(np.uint64)
        weights = np.uint64(1) << np.arange(52, -1, -1, dtype=np.uint64)
        return (bits * weights).sum(axis=1).astype(np.float64) / _TWO53

    def poisson(self, lam: float, n: int) -> np.ndarray:
        # inverse-CDF search; fine for the small means used here
        u = self.uniform(n)
        out = np.zeros(n, dtype=np.int64)
        pmf = math.exp(-lam)
        cdf = np.full(n, pmf)
        k = 0
        active = u >= cdf
        while active.any():
            k += 1
            pmf *= lam / k
            out[active] = k
            cdf = cdf + pmf
            active &= u >= cdf
            if pmf == 0.0:
                break
        return out

    def negative_binomial(self, successes: int, q: float) -> int:
        """Failures before the ``successes``-th success of Bernoulli(q) trials."""
        if q >= 1.0:
            return 0
        u = 1.0 - self.uniform(successes)  # (0, 1]
        return int(np.floor(np.log(u) / math.log1p(-q)).sum())

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")


class SeededSource(RngSource):
    """Deterministic PCG64 stream; equal seeds give equal streams."""

    def __init__(self, seed: int | np.random.SeedSequence):
        if not isinstance(seed, np.random.SeedSequence):
            _check_seed(seed)
            seed = np.random.SeedSequence(seed)
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def next_bits(self, n: int) -> BitString:
        _check_count(n)
        return BitString._wrap(self._gen.integers(0, 2, size=n, dtype=np.uint8))

    def uniform(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    def poisson(self, lam: float, n: int) -> np.ndarray:
        return self._gen.poisson(lam, n)

    def negative_binomial(self, successes: int, q: float) -> int:
        return int(self._gen.negative_binomial(successes, q))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


class OsEntropySource(RngSource):
    def next_bits(self, n: int) -> BitString:
        _check_count(n)
        raw = np.frombuffer(os.urandom((n + 7) // 8), dtype=np.uint8)
        return BitString._wrap(np.unpackbits(raw, count=n))


class RemoteQrngSource(RngSource):
    """Buffered client for an HTTP/JSON hex-token QRNG service.

    Each refill requests ``batch_size`` tokens (more if a single call needs
    it), so many small requests share one round trip.
    """

    def __init__(self, endpoint: str, batch_size: int = 1024, timeout: float = 10.0):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.endpoint = endpoint
        self.batch_size = batch_size
        self.timeout = timeout
        self.requests_made = 0
        self._buf = np.empty(0, dtype=np.uint8)
        self._lock = threading.Lock()

    def next_bits(self, n: int) -> BitString:
        _check_count(n)
        with self._lock:
            while self._buf.size < n:
                block = fetch_remote_block(self.endpoint, self.batch_size, self.timeout)
                self.requests_made += 1
                self._buf = np.concatenate([self._buf, block.array])
            out, self._buf = self._buf[:n], self._buf[n:]
        return BitString._wrap(out)


class FallbackSource(RngSource):
    """Uses ``primary`` until it raises SourceError, then ``fallback`` for good."""

    def __init__(self, primary: RngSource, fallback: RngSource):
        self.primary = primary
        self.fallback = fallback
        self.failed = False

    def next_bits(self, n: int) -> BitString:
        if not self.failed:
            try:
                return self.primary.next_bits(n)
            except SourceError as exc:
                log.warning("remote randomness failed (%s); falling back to OS entropy", exc)
                self.failed = True
        return self.fallback.next_bits(n)


# -- operations ------------------------------------------------------------

def next_bits(source: RngSource, n: int) -> BitString:
    return source.next_bits(n)


def hex_to_bits(text: str) -> BitString:
    """Expand hex digits to bits, four per digit, most significant first."""
    for i, c in enumerate(text):
        if c not in _HEX:
            raise HexParseError(text, i)
    if not text:
        return BitString()
    nibbles = np.array([int(c, 16) for c in text], dtype=np.uint8)
    bits = (nibbles[:, None] >> np.array([3, 2, 1, 0], dtype=np.uint8)) & 1
    return BitString._wrap(bits.reshape(-1))


def _with_query(endpoint: str, **params) -> str:
    parts = urllib.parse.urlsplit(endpoint)
    query = urllib.parse.parse_qsl(parts.query, keep_blank_values=True)
    query = [(k, v) for k, v in query if k not in params]
    query.extend((k, str(v)) for k, v in params.items())
    return urllib.parse.urlunsplit(parts._replace(query=urllib.parse.urlencode(query)))


def fetch_remote_block(endpoint: str, count: int, timeout: float = 10.0) -> BitString:
    """GET ``count`` hex tokens from ``endpoint`` and return their bits."""
    _check_count(count)
    url = _with_query(endpoint, length=count)
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            status = getattr(resp, "status", 200)
            body = resp.read()
    except urllib.error.HTTPError as exc:
        raise SourceError(f"QRNG endpoint returned HTTP {exc.code}") from exc
    except (urllib.error.URLError, OSError) as exc:
        raise SourceError(f"QRNG request failed: {exc}") from exc
    if not 200 <= status < 300:
        raise SourceError(f"QRNG endpoint returned HTTP {status}")
    try:
        doc = json.loads(body)
    except ValueError as exc:
        raise SourceError("QRNG response is not JSON") from exc
    if not isinstance(doc, dict):
        raise SourceError("QRNG response is not a JSON object")
    if doc.get("success") in (False, "false"):
        raise SourceError("QRNG reported success=false")
    data = doc.get("data")
    if not isinstance(data, list) or not data:
        raise SourceError("QRNG response has no data array")
    try:
        return hex_to_bits("".join(str(tok) for tok in data))
    except HexParseError as exc:
        raise SourceError(f"malformed QRNG token: {exc}") from exc


def derive_seed(master_seed: int, label: str, index: int = 0) -> np.random.SeedSequence:
    """Stable substream seed from (master seed, consumer label, index)."""
    _check_seed(master_seed)
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return np.random.SeedSequence([master_seed, int.from_bytes(digest, "big"), index])


def substream(master_seed: int, label: str, index: int = 0) -> SeededSource:
    return SeededSource(derive_seed(master_seed, label, index))


def generator(master_seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Plain numpy generator for pseudo-random bookkeeping (schedules, seeds)."""
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, label, index)))


class StreamFactory:
    """Hands out the per-(label, iteration) sources for one run.

    Seeded runs get an independent PCG64 substream per consumer; OS and
    remote runs share a single underlying source.
    """

    def __init__(self, kind: RngSourceKind, fallback_to_os: bool = False):
        self.kind = kind
        self._shared: RngSource | None = None
        if isinstance(kind, OsEntropy):
            self._shared = OsEntropySource()
        elif isinstance(kind, RemoteQrng):
            remote = RemoteQrngSource(kind.endpoint, kind.batch_size, kind.timeout)
            self._shared = FallbackSource(remote, OsEntropySource()) if fallback_to_os else remote
        elif not isinstance(kind, SeededDeterministic):
            raise TypeError(f"unknown source kind {kind!r}")

    @property
    def sequential_only(self) -> bool:
        return isinstance(self.kind, RemoteQrng)

    def get(self, label: str, iteration: int = 0) -> RngSource:
        if self._shared is not None:
            return self._shared
        return substream(self.kind.seed, label, iteration)


def _check_count(n: int) -> None:
    if int(n) != n or n < 1:
        raise ValueError(f"bit count must be a positive integer, got {n!r}")


def _check_seed(seed: int) -> None:
    if not 0 <= int(seed) <= SEED_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
