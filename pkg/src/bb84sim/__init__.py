"""Seedable BB84 quantum key distribution simulator."""
from .bits import BitString
from .config import ConfigError, SimConfig, load_config_file, load_preset
from .reporting import IterationRecord, RunSummary, summarize
from .runner import run, sweep

__version__ = "0.1.0"

__all__ = ["BitString", "ConfigError", "IterationRecord", "RunSummary", "SimConfig",
           "load_config_file", "load_preset", "run", "summarize", "sweep"]
