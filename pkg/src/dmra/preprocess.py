"""Frequency initialisation on the canonical DFT grid (sparsity selector A)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PreprocessConfig",
    "InitialEstimate",
    "canonical_grid",
    "dft_gains",
    "total_energy",
    "threshold_a",
    "selector_a",
    "initialize",
]


@dataclass(frozen=True)
class PreprocessConfig:
    gamma_a: float = 0.05
    s_prior: int = 20
    sigma_sq: float = 0.0

    def __post_init__(self):
        if not 0 < self.gamma_a < 1:
            raise ValueError(f"gamma_a must lie in (0, 1), got {self.gamma_a}")
        if self.s_prior < 1:
            raise ValueError(f"s_prior must be >= 1, got {self.s_prior}")
        if self.sigma_sq < 0:
            raise ValueError(f"sigma_sq must be >= 0, got {self.sigma_sq}")


@dataclass(frozen=True)
class InitialEstimate:
    """Output of the preprocessing step.

    ``selected_idx`` indexes into ``grid``; ``fallback`` is set when no grid
    gain cleared the threshold and the ``s_prior`` strongest were kept.
    """

    grid: np.ndarray
    gains: np.ndarray
    selected_idx: np.ndarray
    threshold: float
    e_tot: float
    fallback: bool = False

    @property
    def selected(self):
        return self.grid[self.selected_idx]


def canonical_grid(m_count):
    return np.arange(m_count) / m_count


def dft_gains(y):
    """Matched-filter gains ``A^H y / M`` on the canonical grid.

    With the ``exp(-j 2 pi m w)`` atom convention ``A^H y`` is the inverse
    DFT scaled by ``M``, so this is exactly ``numpy.fft.ifft(y)``.
    """
    y = np.asarray(y, dtype=complex)
    if y.size < 1:
        raise ValueError("signal must have at least one sample")
    return np.fft.ifft(y)


def total_energy(y, sigma_sq):
    """Per-sample signal power with the noise floor removed, clamped at 0."""
    y = np.asarray(y, dtype=complex)
    return max(float(np.vdot(y, y).real) / y.size - sigma_sq, 0.0)


def threshold_a(config, m_count, e_tot):
    """Hard threshold ``sigma^2 ln(M)/M + gamma_a E_tot / S_pri``."""
    if m_count < 2:
        raise ValueError(f"m_count must be >= 2, got {m_count}")
    return config.sigma_sq * np.log(m_count) / m_count + config.gamma_a * e_tot / config.s_prior


def selector_a(gains, psi_a):
    """Indices ``k`` with ``|gains_k|^2 >= psi_a``, in grid order."""
    energy = np.abs(np.asarray(gains)) ** 2
    return np.flatnonzero(energy >= psi_a)


def initialize(y, config):
    """Run the full preprocessing step on ``y``.

    Falls back to the ``s_prior`` largest grid gains if the threshold
    rejects everything, so the next stage always gets a nonempty set.
    """
    y = np.asarray(y, dtype=complex)
    m_count = y.size
    gains = dft_gains(y)
    e_tot = total_energy(y, config.sigma_sq)
    psi = threshold_a(config, m_count, e_tot)
    idx = selector_a(gains, psi)
    fallback = False
    if idx.size == 0:
        k = min(config.s_prior, m_count)
        # stable sort keeps the choice deterministic under ties
        order = np.argsort(-np.abs(gains) ** 2, kind="stable")
        idx = np.sort(order[:k])
        fallback = True
    return InitialEstimate(
        grid=canonical_grid(m_count),
        gains=gains,
        selected_idx=idx,
        threshold=float(psi),
        e_tot=e_tot,
        fallback=fallback,
    )
