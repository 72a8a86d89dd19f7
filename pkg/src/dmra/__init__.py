"""Adaptive line-spectrum estimation by dynamical multi-resolution of atoms."""

from .config import ConfigError, DmraConfig, dump_config, load_config
from .pipeline import DmraResult, EstimationError, dmra

__all__ = ["ConfigError", "DmraConfig", "DmraResult", "EstimationError", "dmra", "dump_config", "load_config"]
