"""Simulation configuration: a flat key/value model with validation,
text and JSON codecs, and the bundled experiment presets."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Optional

from . import randomness
from .core import ChannelParams
from .physics import DetectorParams, LinkParams, SourceParams

PRESETS = ("exp1", "exp2")

_CHOICES = {
    "rng": ("seeded", "os", "remote"),
    "rng_fallback": ("abort", "os"),
    "multiphoton_model": ("exact", "truncated"),
    "shared_selection": ("prefix", "random"),
    "server_role": ("alice", "bob"),
    "acquisition_method": ("geometric", "pulse"),
}
_RATIOS = ("epsilon", "p_depol", "threshold", "attack_rate", "eta_d")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    """One or more configuration keys are invalid."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class SimConfig:
    # universal parameters
    photons: int = 10_000
    iterations: int = 1
    eve: bool = False
    epsilon: float = 1.0
    p_depol: float = 0.0
    sharing_rate: float = 0.5
    ip: str = "127.0.0.1"
    port: int = 5005
    seed: int = 0
    threshold: float = 0.125

    # randomness
    rng: str = "seeded"
    rng_fallback: str = "abort"
    qrng_endpoint: str = "https://qrng.anu.edu.au/API/jsonI.php?type=hex16&size=8"
    qrng_batch_size: int = 1024
    qrng_timeout_s: float = 10.0

    # optional modules
    random_attacks: bool = False
    attack_rate: float = 0.5
    research: bool = False
    weak_pulse: bool = False
    mu: float = 0.1
    source_frequency_hz: float = 1e6
    attenuation: bool = False
    alpha_ch_db_per_km: float = 0.0
    distance_km: float = 0.0
    alpha_det_db: float = 0.0
    detector_efficiency: bool = False
    eta_d: float = 1.0
    dead_time: bool = False
    tau_dead_s: float = 0.0
    multiphoton_model: str = "exact"

    # behaviour switches
    shared_selection: str = "prefix"
    acquisition_method: str = "geometric"
    max_pulses: float = 1e10
    server_role: str = "alice"
    timeout_s: float = 30.0
    connect_retries: int = 3
    connect_delay_s: float = 1.0

    # free-form "meta.*" keys carried along for provenance
    meta: dict = field(default_factory=dict)

    # -- derived views ----------------------------------------------------

    @property
    def physics_enabled(self) -> bool:
        return self.weak_pulse or self.attenuation or self.detector_efficiency or self.dead_time

    def channel_params(self) -> ChannelParams:
        return ChannelParams(self.epsilon, self.p_depol, self.eve)

    def source_params(self) -> SourceParams:
        return SourceParams(self.mu, self.source_frequency_hz, ideal=not self.weak_pulse)

    def link_params(self) -> Optional[LinkParams]:
        if not self.attenuation:
            return None
        return LinkParams(self.alpha_ch_db_per_km, self.distance_km, self.alpha_det_db)

    def detector_params(self) -> DetectorParams:
        return DetectorParams(
            eta_d=self.eta_d if self.detector_efficiency else 1.0,
            tau_dead_s=self.tau_dead_s if self.dead_time else 0.0,
            truncated_multiphoton=self.multiphoton_model == "truncated",
        )

    def source_kind(self) -> randomness.RngSourceKind:
        if self.rng == "os":
            return randomness.OsEntropy()
        if self.rng == "remote":
            return randomness.RemoteQrng(self.qrng_endpoint, self.qrng_batch_size, self.qrng_timeout_s)
        return randomness.SeededDeterministic(self.seed)

    def streams(self) -> randomness.StreamFactory:
        return randomness.StreamFactory(self.source_kind(), fallback_to_os=self.rng_fallback == "os")

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    # -- validation -------------------------------------------------------

    def problems(self) -> list[str]:
        out = []
        if self.photons < 1:
            out.append(f"photons: must be >= 1 (got {self.photons})")
        if self.iterations < 1:
            out.append(f"iterations: must be >= 1 (got {self.iterations})")
        for name in _RATIOS:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                out.append(f"{name}: must lie in [0, 1] (got {v})")
        if not 0.0 < self.sharing_rate <= 1.0:
            out.append(f"sharing_rate: must lie in (0, 1] (got {self.sharing_rate})")
        if not 0 <= self.port <= 65535:
            out.append(f"port: must lie in [0, 65535] (got {self.port})")
        if not 0 <= self.seed <= randomness.SEED_MAX:
            out.append(f"seed: must be a 64-bit unsigned integer (got {self.seed})")
        for name, choices in _CHOICES.items():
            v = getattr(self, name)
            if v not in choices:
                out.append(f"{name}: must be one of {', '.join(choices)} (got {v!r})")
        if self.weak_pulse and self.mu <= 0:
            out.append(f"mu: must be > 0 (got {self.mu})")
        if self.source_frequency_hz <= 0:
            out.append(f"source_frequency_hz: must be > 0 (got {self.source_frequency_hz})")
        for name in ("alpha_ch_db_per_km", "distance_km", "alpha_det_db", "tau_dead_s"):
            if getattr(self, name) < 0:
                out.append(f"{name}: must be >= 0 (got {getattr(self, name)})")
        if self.qrng_batch_size < 1:
            out.append(f"qrng_batch_size: must be >= 1 (got {self.qrng_batch_size})")
        for name in ("qrng_timeout_s", "timeout_s", "max_pulses"):
            if getattr(self, name) <= 0:
                out.append(f"{name}: must be > 0 (got {getattr(self, name)})")
        if self.connect_retries < 1:
            out.append(f"connect_retries: must be >= 1 (got {self.connect_retries})")
        if self.connect_delay_s < 0:
            out.append(f"connect_delay_s: must be >= 0 (got {self.connect_delay_s})")
        return out

    def validate(self) -> "SimConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    # -- codecs -----------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        meta = d.pop("meta")
        d.update({f"meta.{k}": v for k, v in meta.items()})
        return d

    @classmethod
    def from_dict(cls, d: Mapping, base: Optional["SimConfig"] = None) -> "SimConfig":
        """Build from already-typed values (e.g. decoded JSON)."""
        return cls.from_mapping({k: v if isinstance(v, str) else _format(v) for k, v in d.items()}, base)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls.from_dict(json.loads(text))

    def to_text(self) -> str:
        lines = [f"{k} = {_format(v)}" for k, v in self.to_dict().items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, raw: Mapping[str, str], base: Optional["SimConfig"] = None) -> "SimConfig":
        """Apply string key/value pairs over ``base`` (or defaults), then validate.

        Every bad key is reported at once.
        """
        cfg = dataclasses.replace(base) if base is not None else cls()
        cfg.meta = dict(cfg.meta)
        types = {f.name: type(f.default) for f in dataclasses.fields(cls) if f.name != "meta"}
        problems = []
        for key, text in raw.items():
            if key.startswith("meta.") and len(key) > 5:
                cfg.meta[key[5:]] = text
                continue
            if key not in types:
                problems.append(f"{key}: unknown key")
                continue
            try:
                setattr(cfg, key, _coerce(types[key], text))
            except ValueError:
                problems.append(f"{key}: expected {types[key].__name__}, got {text!r}")
        problems.extend(p for p in cfg.problems()
                        if p.split(":")[0] not in {q.split(":")[0] for q in problems})
        if problems:
            raise ConfigError(problems)
        return cfg


def _coerce(typ: type, text: str):
    text = text.strip()
    if typ is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(text)
    if typ is int:
        return int(float(text)) if _is_integral(text) else int(text)
    if typ is float:
        return float(text)
    return text


def _is_integral(text: str) -> bool:
    try:
        v = float(text)
    except ValueError:
        return False
    return v.is_integer() and ("e" in text.lower() or "." in text)


def _format(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected 'key = value'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            problems.append(f"{source}:{lineno}: missing key")
            continue
        out[key] = value
    if problems:
        raise ConfigError(problems)
    return out


def load_config_file(path, base: Optional[SimConfig] = None) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return SimConfig.from_mapping(parse_config_text(fh.read(), str(path)), base)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError([f"preset: unknown preset {name!r} (choose from {', '.join(PRESETS)})"])
    return resources.files("bb84sim.presets").joinpath(f"{name}.conf").read_text(encoding="utf-8")


def load_preset(name: str) -> SimConfig:
    return SimConfig.from_mapping(parse_config_text(preset_text(name), f"{name}.conf"))
