"""Tunables for the full estimator and their (de)serialisation."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

__all__ = ["DmraConfig", "ConfigError", "load_config", "dump_config"]


class ConfigError(ValueError):
    """Invalid or unknown configuration entries."""


def _auto_or_positive(name, value, allow_zero=False):
    if value == "auto":
        return
    if isinstance(value, str) or not math.isfinite(value):
        raise ConfigError(f"{name} must be 'auto' or a finite number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"{name} must be {'>=' if allow_zero else '>'} 0, got {value}")


@dataclass(frozen=True)
class DmraConfig:
    """Every knob of the estimator.

    Defaults follow the SMV experiments: gamma_a=0.05, gamma_b=0.2,
    gamma_c=0.8, beta0=0.5/M (``None`` means "half a DFT bin"), grid
    refinement factor 5, prior sparsity 20 and a 1% false-alarm rate.

    ``sigma_sq`` is the noise power per complex sample and must be supplied;
    it is never estimated from the data.
    """

    sigma_sq: float
    gamma_a: float = 0.05
    gamma_b: float = 0.2
    gamma_c: float = 0.8
    beta0: float | None = None
    gamma: int = 5
    s_prior: int = 20
    p_fa: float = 0.01
    lambda0: float | str = "auto"
    epsilon0: float | str = "auto"
    epsilon_decay: float = 0.8
    epsilon_floor: float | None = None
    max_mm_iter: int = 100
    progressive_rounds: int = 0
    max_outer: int = 12
    qn_tolerance: float = 1e-9
    qn_max_iter: int = 500
    converge_tol: float = 1e-10
    residual_floor: float = 1e-18
    stage1_ridge: float = 0.01

    def __post_init__(self):
        if not (math.isfinite(self.sigma_sq) and self.sigma_sq >= 0):
            raise ConfigError(f"sigma_sq must be a finite number >= 0, got {self.sigma_sq}")
        for name in ("gamma_a", "gamma_b", "epsilon_decay"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if not self.gamma_c > 0:
            raise ConfigError(f"gamma_c must be > 0, got {self.gamma_c}")
        if self.beta0 is not None and not self.beta0 > 0:
            raise ConfigError(f"beta0 must be > 0, got {self.beta0}")
        if not 0 < self.p_fa < 1:
            raise ConfigError(f"p_fa must lie in (0, 1), got {self.p_fa}")
        for name in ("gamma", "progressive_rounds"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("s_prior", "max_mm_iter", "max_outer", "qn_max_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("qn_tolerance", "converge_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.stage1_ridge < 0:
            raise ConfigError(f"stage1_ridge must be >= 0, got {self.stage1_ridge}")
        if self.residual_floor < 0:
            raise ConfigError(f"residual_floor must be >= 0, got {self.residual_floor}")
        if self.epsilon_floor is not None and not self.epsilon_floor > 0:
            raise ConfigError(f"epsilon_floor must be > 0, got {self.epsilon_floor}")
        _auto_or_positive("lambda0", self.lambda0, allow_zero=True)
        _auto_or_positive("epsilon0", self.epsilon0)

    def beta_for(self, m_count):
        return 0.5 / m_count if self.beta0 is None else self.beta0

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "sigma_sq" not in data:
            raise ConfigError("sigma_sq is required")
        ints = {"gamma", "s_prior", "max_mm_iter", "progressive_rounds", "max_outer", "qn_max_iter"}
        clean = {}
        for key, value in data.items():
            if key in ints:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{key} must be an integer, got {value!r}")
            elif value is not None and value != "auto":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{key} must be a number, got {value!r}")
                value = float(value)
            clean[key] = value
        try:
            return cls(**clean)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path, **overrides):
    """Read a YAML config file.  A top-level ``dmra:`` section is accepted."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    if set(data) == {"dmra"}:
        data = data["dmra"] or {}
    data = {**data, **overrides}
    return DmraConfig.from_dict(data)


def dump_config(config, path):
    """Write the effective config (defaults filled in) as YAML."""
    body = yaml.safe_dump({"dmra": config.to_dict()}, sort_keys=False)
    Path(path).write_text("# effective DMRA configuration\n" + body)
