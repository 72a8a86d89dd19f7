"""End-to-end estimator: preprocessing, on-grid stage, off-grid stage."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import DmraConfig
from .core import synthesize
from .offgrid import cfar_threshold, off_grid_estimate
from .ongrid import on_grid_estimate
from .preprocess import PreprocessConfig, initialize

__all__ = ["EstimationError", "DmraResult", "init_lambda", "epsilon_schedule", "adapt_lambda", "dmra"]

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    """The estimator could not produce any atom."""


@dataclass
class DmraResult:
    omegas: np.ndarray
    gains: np.ndarray
    residual_peak: float
    accepted: bool
    trace: dict = field(default_factory=dict)

    def reconstruct(self, m_count):
        return synthesize(self.omegas, self.gains, m_count)

    def to_dict(self):
        return {
            "omegas": [float(w) for w in self.omegas],
            "gains_re": [float(h.real) for h in self.gains],
            "gains_im": [float(h.imag) for h in self.gains],
            "residual_peak": float(self.residual_peak),
            "accepted": bool(self.accepted),
            "trace": self.trace,
        }


def init_lambda(sigma_sq, e_tot, s_prior):
    """Initial penalty weight ``sigma^2 / (E_tot / S_pri)``; ``sigma^2`` if ``E_tot == 0``."""
    if s_prior < 1:
        raise ValueError(f"s_prior must be >= 1, got {s_prior}")
    if e_tot <= 0:
        return float(sigma_sq)
    return float(sigma_sq) / (e_tot / s_prior)


def adapt_lambda(sigma_sq, gains):
    """Penalty weight from the current mean per-atom energy."""
    energy = float(np.mean(np.abs(gains) ** 2)) if np.size(gains) else 0.0
    return float(sigma_sq) if energy <= 0 else float(sigma_sq) / energy


def epsilon_schedule(step, epsilon0, decay=0.8, floor=None):
    """``max(epsilon0 * decay**step, floor)``; ``floor`` defaults to ``1e-8 epsilon0``."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if floor is None:
        floor = 1e-8 * epsilon0
    return max(epsilon0 * decay**step, floor)


def dmra(y, config):
    """Estimate the line spectrum of ``y``.

    Parameters
    ----------
    y : array_like
        Complex observation of length ``M >= 2``.
    config : DmraConfig

    Returns
    -------
    DmraResult
        Frequencies sorted ascending with their complex gains, the final
        residual peak, whether it passed the CFAR test and a trace of every
        stage.

    Raises
    ------
    EstimationError
        When no atom survives to the off-grid stage.
    """
    y = np.asarray(y, dtype=complex)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("signal must be a vector of at least 2 samples")
    if not isinstance(config, DmraConfig):
        raise TypeError("config must be a DmraConfig")
    m_count = y.size
    sigma_sq = config.sigma_sq

    init = initialize(y, PreprocessConfig(config.gamma_a, config.s_prior, sigma_sq))
    omega0 = init.selected
    if omega0.size == 0:
        raise EstimationError("preprocessing selected no frequency")

    if config.epsilon0 == "auto":
        eps0 = float(np.max(np.abs(init.gains) ** 2))
        if eps0 <= 0:
            eps0 = 1.0
    else:
        eps0 = float(config.epsilon0)
    eps_floor = config.epsilon_floor if config.epsilon_floor is not None else 1e-8 * eps0

    def eps_at(step):
        return epsilon_schedule(step, eps0, config.epsilon_decay, eps_floor)

    lam = init_lambda(sigma_sq, init.e_tot, config.s_prior) if config.lambda0 == "auto" else float(config.lambda0)
    trace = {
        "preprocess": {
            "threshold": init.threshold,
            "e_tot": init.e_tot,
            "selected": int(omega0.size),
            "fallback": bool(init.fallback),
        },
        "lambda": [lam],
        "epsilon0": eps0,
    }

    stage1 = on_grid_estimate(y, omega0, config, lam=lam, epsilon=eps_at, ridge=config.stage1_ridge * m_count)
    trace["stage1"] = stage1.trace
    if stage1.omegas.size == 0:
        raise EstimationError("on-grid stage left no frequency")
    step = stage1.trace["iterations"]

    if config.lambda0 == "auto":
        lam = adapt_lambda(sigma_sq, stage1.gains)
    trace["lambda"].append(lam)

    t_v = cfar_threshold(sigma_sq, m_count, config.p_fa)
    floor = config.residual_floor * float(np.vdot(y, y).real) / m_count
    t_eff = max(t_v, floor)
    stage2 = off_grid_estimate(
        y, stage1.omegas, stage1.gains, config,
        lam=lam, epsilon=lambda i: eps_at(step + i), t_v=t_eff, beta0=config.beta_for(m_count),
    )
    trace["stage2"] = stage2.trace
    trace["t_v"] = float(t_v)
    if stage2.omegas.size == 0:
        raise EstimationError("off-grid stage left no frequency")
    return DmraResult(stage2.omegas, stage2.gains, stage2.residual_peak, stage2.accepted, trace)
