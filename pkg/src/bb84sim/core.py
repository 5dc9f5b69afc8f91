"""BB84 pipeline: preparation, intercept-resend, depolarization, measurement,
sifting, shared-bit QBER estimation, and the closed-form analytics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .bits import BitString
from .randomness import RngSource

RECTILINEAR = 0
DIAGONAL = 1


class EstimationUndefined(ValueError):
    """Raised when a QBER cannot be estimated (no bits to compare)."""


class PhotonRecord(NamedTuple):
    bit: int
    basis: int


@dataclass(frozen=True, eq=False)
class PhotonBatch:
    """Photons in transit, stored column-wise.

    Indexing yields :class:`PhotonRecord` values; the arrays are what the
    pipeline stages operate on.
    """

    bits: np.ndarray
    bases: np.ndarray

    def __post_init__(self):
        if self.bits.shape != self.bases.shape or self.bits.ndim != 1:
            raise ValueError("bits and bases must be 1-D arrays of equal length")
        for arr in (self.bits, self.bases):
            arr.flags.writeable = False

    @classmethod
    def from_records(cls, records) -> "PhotonBatch":
        records = list(records)
        for r in records:
            if r[0] not in (0, 1) or r[1] not in (0, 1):
                raise ValueError(f"photon fields must be 0/1, got {tuple(r)}")
        arr = np.array(records, dtype=np.uint8).reshape(-1, 2)
        return cls(arr[:, 0].copy(), arr[:, 1].copy())

    def __len__(self) -> int:
        return int(self.bits.size)

    def __getitem__(self, i: int) -> PhotonRecord:
        return PhotonRecord(int(self.bits[i]), int(self.bases[i]))

    def __iter__(self) -> Iterator[PhotonRecord]:
        return (PhotonRecord(int(b), int(s)) for b, s in zip(self.bits, self.bases))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhotonBatch):
            return NotImplemented
        return np.array_equal(self.bits, other.bits) and np.array_equal(self.bases, other.bases)

    def bit_string(self) -> BitString:
        return BitString._wrap(self.bits)

    def basis_string(self) -> BitString:
        return BitString._wrap(self.bases)


@dataclass(frozen=True)
class ChannelParams:
    epsilon: float = 0.0
    p: float = 0.0
    eve_enabled: bool = False

    def __post_init__(self):
        _check_ratio("epsilon", self.epsilon)
        _check_ratio("p", self.p)

    @property
    def interception_rate(self) -> float:
        return self.epsilon if self.eve_enabled else 0.0


@dataclass(frozen=True)
class SiftResult:
    kept_indices: np.ndarray
    alice_sifted: BitString
    bob_sifted: BitString

    def __len__(self) -> int:
        return len(self.alice_sifted)


@dataclass(frozen=True)
class EstimationResult:
    shared_count: int
    mismatches: int
    qber_est: float
    usable_alice: BitString
    usable_bob: BitString
    shared_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


@dataclass(frozen=True)
class AnalyticsInput:
    q_e: float
    qber: float

    def __post_init__(self):
        if not 0.0 <= self.q_e <= 0.5:
            raise ValueError(f"q_e must lie in [0, 1/2], got {self.q_e}")
        _check_ratio("qber", self.qber)


# -- protocol stages -------------------------------------------------------

def prepare(data: BitString, bases: BitString) -> PhotonBatch:
    if len(data) != len(bases):
        raise ValueError(f"data and bases differ in length ({len(data)} vs {len(bases)})")
    if len(data) < 1:
        raise ValueError("need at least one photon")
    return PhotonBatch(data.array.copy(), bases.array.copy())


def interception_mask(n: int, epsilon: float) -> np.ndarray:
    """Photon i is intercepted iff floor((i+1)*eps) > floor(i*eps)."""
    _check_ratio("epsilon", epsilon)
    steps = np.floor(np.arange(n + 1, dtype=np.float64) * epsilon)
    return np.diff(steps) > 0


def eve_intercept(photons: PhotonBatch, epsilon: float,
                  eve_bases_rng: RngSource, eve_coin_rng: RngSource) -> PhotonBatch:
    """Intercept-resend on a constant stride of floor(N*eps) photons.

    A correct-basis measurement resends the photon untouched; a wrong-basis
    one resends a random bit in Eve's basis.
    """
    idx = np.flatnonzero(interception_mask(len(photons), epsilon))
    if idx.size == 0:
        return photons
    bits = photons.bits.copy()
    bases = photons.bases.copy()
    eve_bases = eve_bases_rng.next_bits(idx.size).array
    wrong = idx[eve_bases != bases[idx]]
    if wrong.size:
        bits[wrong] = eve_coin_rng.next_bits(wrong.size).array
        bases[wrong] = 1 - bases[wrong]
    return PhotonBatch(bits, bases)


def depolarize(photons: PhotonBatch, p: float, depol_rng: RngSource) -> PhotonBatch:
    """Bit flip, basis flip, or both, each with probability p/3 per photon."""
    _check_ratio("p", p)
    if p == 0.0:
        return photons
    u = depol_rng.uniform(len(photons))
    third = p / 3.0
    bit_flip = (u < third) | ((u >= 2 * third) & (u < p))
    basis_flip = (u >= third) & (u < p)
    return PhotonBatch(photons.bits ^ bit_flip.astype(np.uint8),
                       photons.bases ^ basis_flip.astype(np.uint8))


def measure(photons: PhotonBatch, bob_bases: BitString, coin_rng: RngSource) -> BitString:
    """Bob's readout: the photon's bit on a basis match, a fair coin otherwise."""
    if len(photons) != len(bob_bases):
        raise ValueError(f"{len(photons)} photons but {len(bob_bases)} bases")
    coins = coin_rng.next_bits(len(photons)).array
    match = photons.bases == bob_bases.array
    return BitString._wrap(np.where(match, photons.bits, coins))


def sift(alice_bases: BitString, bob_bases: BitString,
         alice_data: BitString, bob_data: BitString) -> SiftResult:
    n = len(alice_bases)
    if not (len(bob_bases) == len(alice_data) == len(bob_data) == n):
        raise ValueError("sift inputs must all have the same length")
    kept = np.flatnonzero(alice_bases.array == bob_bases.array)
    return SiftResult(kept, alice_data[kept], bob_data[kept])


def shared_count(sifted_len: int, f: float) -> int:
    if not 0.0 < f <= 1.0:
        raise ValueError(f"sharing rate must lie in (0, 1], got {f}")
    if sifted_len < 1:
        raise EstimationUndefined("empty sifted key")
    return max(1, min(sifted_len, math.floor(f * sifted_len + 0.5)))


def shared_positions(sifted_len: int, f: float, rng: Optional[RngSource] = None) -> np.ndarray:
    """Sifted-key positions disclosed for estimation: a prefix, or a random subset."""
    k = shared_count(sifted_len, f)
    if rng is None:
        return np.arange(k)
    return np.sort(rng.permutation(sifted_len)[:k])


def split_key(key: BitString, positions: np.ndarray) -> tuple[BitString, BitString]:
    """(shared bits, remaining usable bits) of a sifted key."""
    mask = np.zeros(len(key), dtype=bool)
    mask[positions] = True
    return key[np.flatnonzero(mask)], key[np.flatnonzero(~mask)]


def share_and_estimate(sift_result: SiftResult, f: float,
                       rng: Optional[RngSource] = None) -> EstimationResult:
    """Disclose a fraction f of the sifted key and estimate the QBER from it.

    The estimate divides by the number of disclosed bits.
    """
    pos = shared_positions(len(sift_result), f, rng)
    a_shared, a_usable = split_key(sift_result.alice_sifted, pos)
    b_shared, b_usable = split_key(sift_result.bob_sifted, pos)
    errors = a_shared.mismatches(b_shared)
    return EstimationResult(len(pos), errors, errors / len(pos), a_usable, b_usable, pos)


def remaining_key_qber(est: EstimationResult) -> float:
    if len(est.usable_alice) == 0:
        raise EstimationUndefined("no usable key bits remain")
    return est.usable_alice.mismatches(est.usable_bob) / len(est.usable_alice)


# -- analytics -------------------------------------------------------------

def qber_exact(alice_sifted: BitString, bob_sifted: BitString) -> float:
    if len(alice_sifted) == 0:
        raise EstimationUndefined("empty sifted key")
    return alice_sifted.mismatches(bob_sifted) / len(alice_sifted)


def theoretical_qber(p: float, epsilon: float) -> float:
    """Expected QBER under depolarization p and intercept-resend rate eps."""
    _check_ratio("p", p)
    _check_ratio("epsilon", epsilon)
    return epsilon / 4.0 + (p / 3.0) * (2.0 - epsilon)


def binary_entropy(x: float) -> float:
    _check_ratio("x", x)
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def theoretical_secret_fraction(inp: AnalyticsInput) -> float:
    return binary_entropy(0.5 - inp.q_e) - binary_entropy(inp.qber)


def secret_key_rate(final_len: int, sifted_len: int, r_sifted: float) -> float:
    if sifted_len < 1:
        raise EstimationUndefined("secret key rate undefined for an empty sifted key")
    if not 0 <= final_len <= sifted_len:
        raise ValueError(f"final length {final_len} outside [0, {sifted_len}]")
    return final_len / sifted_len * r_sifted


def _check_ratio(name: str, x: float) -> None:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")
