"""Source, channel and detector imperfections expressed as photon statistics
and quantum-channel timing."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .randomness import RngSource

DEFAULT_MAX_PULSES = 10**10
_CHUNK = 1 << 20


class AcquisitionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SourceParams:
    mu: float = 0.1
    f_source: float = 1e6  # Hz
    ideal: bool = False

    def __post_init__(self):
        if self.f_source <= 0:
            raise ValueError("source frequency must be positive")
        if not self.ideal and self.mu <= 0:
            raise ValueError("mean photon number must be positive for a weak-pulse source")


@dataclass(frozen=True)
class LinkParams:
    alpha_ch: float = 0.0  # dB/km
    distance_km: float = 0.0
    alpha_det: float = 0.0  # dB

    def __post_init__(self):
        if min(self.alpha_ch, self.distance_km, self.alpha_det) < 0:
            raise ValueError("attenuation parameters must be non-negative")

    @property
    def total_db(self) -> float:
        return self.alpha_ch * self.distance_km + self.alpha_det

    @property
    def transmittance(self) -> float:
        return 10.0 ** (-self.total_db / 10.0)


@dataclass(frozen=True)
class DetectorParams:
    eta_d: float = 1.0
    tau_dead_s: float = 0.0
    truncated_multiphoton: bool = False

    def __post_init__(self):
        if not 0.0 <= self.eta_d <= 1.0:
            raise ValueError("detector efficiency must lie in [0, 1]")
        if self.tau_dead_s < 0:
            raise ValueError("dead time must be non-negative")


@dataclass(frozen=True)
class AcquisitionResult:
    pulses_emitted: int
    t_source_s: float
    t_dead_s: float
    t_quantum_s: float


NO_LOSS = LinkParams()
PERFECT_DETECTOR = DetectorParams()


def effective_mu(src: SourceParams, link: LinkParams) -> float:
    """Mean photon number after channel and detector attenuation."""
    if src.ideal:
        raise ValueError("effective mu is undefined for an ideal single-photon source")
    return src.mu * link.transmittance


def pulse_photon_count(mu_eff: float, rng: RngSource) -> int:
    if mu_eff <= 0:
        raise ValueError("mu_eff must be positive")
    return int(rng.poisson(mu_eff, 1)[0])


def pulse_detection_probability(k, det: DetectorParams):
    """Probability that a pulse carrying k >= 1 photons triggers the detector.

    Default is the exact union ``1 - (1 - eta)^k``.  With ``truncated_multiphoton``
    multi-photon pulses use the truncated form ``k*eta - eta^k``, clamped to
    [0, 1], and single photons use ``eta``; the two modes agree for k <= 2.
    Accepts scalars or integer arrays.
    """
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise ValueError("photon count must be at least 1")
    eta = det.eta_d
    if det.truncated_multiphoton:
        p = np.where(k_arr == 1, eta, np.clip(k_arr * eta - eta**k_arr, 0.0, 1.0))
    else:
        p = -np.expm1(k_arr * math.log1p(-eta)) if eta < 1.0 else np.ones_like(k_arr, dtype=float)
    return float(p) if np.ndim(p) == 0 else p


def per_pulse_detection_probability(mu_eff: float, det: DetectorParams) -> float:
    """Poisson mixture of pulse_detection_probability over the photon number."""
    if not det.truncated_multiphoton:
        return -math.expm1(-mu_eff * det.eta_d)
    total = 0.0
    pmf = math.exp(-mu_eff)
    k = 0
    tail = 1.0 - pmf
    while tail > 1e-17 and k < 10_000:
        k += 1
        pmf *= mu_eff / k
        tail -= pmf
        total += pmf * pulse_detection_probability(k, det)
    return total


def per_attempt_probability(src: SourceParams, link: Optional[LinkParams],
                            det: Optional[DetectorParams]) -> float:
    """Chance that one emitted pulse (or photon, for an ideal source) is recorded."""
    link = link or NO_LOSS
    det = det or PERFECT_DETECTOR
    if src.ideal:
        return link.transmittance * det.eta_d
    return per_pulse_detection_probability(effective_mu(src, link), det)


def simulate_acquisition(n_photons: int, src: SourceParams, link: Optional[LinkParams],
                         det: Optional[DetectorParams], rng: RngSource, *,
                         method: str = "geometric",
                         max_pulses: float = DEFAULT_MAX_PULSES) -> AcquisitionResult:
    """Emit pulses until ``n_photons`` detections have been recorded.

    ``method="pulse"`` draws a photon number and a detection coin for every
    pulse.  ``method="geometric"`` samples the pulse count directly: pulses
    are i.i.d. trials with success probability ``per_attempt_probability``,
    so the count is ``n`` plus a negative-binomial number of failures, which
    has the same distribution at a fraction of the cost.
    """
    if n_photons < 1:
        raise ValueError("need at least one photon")
    det = det or PERFECT_DETECTOR
    q = per_attempt_probability(src, link, det)
    if q <= 0.0 or n_photons / q > max_pulses:
        expected = math.inf if q <= 0 else n_photons / q
        raise AcquisitionError(
            f"expected {expected:.3g} pulses to collect {n_photons} detections "
            f"(per-pulse detection probability {q:.3g}) exceeds the cap of {max_pulses:.3g}")
    if method == "geometric":
        pulses = n_photons + rng.negative_binomial(n_photons, q)
    elif method == "pulse":
        pulses = _count_pulses(n_photons, q, src, link or NO_LOSS, det, rng)
    else:
        raise ValueError(f"unknown acquisition method {method!r}")
    t_source = pulses / src.f_source
    t_dead = n_photons * det.tau_dead_s
    return AcquisitionResult(int(pulses), t_source, t_dead, t_source + t_dead)


def _count_pulses(n: int, q: float, src: SourceParams, link: LinkParams,
                  det: DetectorParams, rng: RngSource) -> int:
    detected = 0
    emitted = 0
    if not src.ideal:
        mu_eff = effective_mu(src, link)
    while True:
        chunk = int(min(_CHUNK, 1.2 * (n - detected) / q + 64))
        if src.ideal:
            hit = rng.uniform(chunk) < link.transmittance * det.eta_d
        else:
            k = rng.poisson(mu_eff, chunk)
            hit = np.zeros(chunk, dtype=bool)
            multi = np.flatnonzero(k)
            if multi.size:
                p = pulse_detection_probability(k[multi], det)
                hit[multi] = rng.uniform(multi.size) < p
        hits = np.flatnonzero(hit)
        if detected + hits.size >= n:
            return emitted + int(hits[n - detected - 1]) + 1
        detected += hits.size
        emitted += chunk


def theoretical_sifted_rate(src: SourceParams, link: Optional[LinkParams],
                            det: Optional[DetectorParams]) -> float:
    """Half the detected-pulse rate, for negligible dark counts."""
    link = link or NO_LOSS
    det = det or PERFECT_DETECTOR
    return 0.5 * -math.expm1(-effective_mu(src, link) * det.eta_d) * src.f_source


def sifted_rate_from_iteration(sifted_len: int, acq: AcquisitionResult) -> float:
    if acq.t_quantum_s <= 0:
        raise ValueError("sifted rate undefined for zero elapsed time")
    return sifted_len / acq.t_quantum_s
