"""Atoms, dictionaries, signal synthesis and the sparsity-penalised objective.

Frequencies live on the unit torus [0, 1) in cycles/sample.  An atom of
length ``M`` is

    a(w) = [1, exp(-j 2 pi w), ..., exp(-j 2 pi (M-1) w)]^T

and a signal is ``y = A(w) h + noise`` with ``A(w) = [a(w_1), ..., a(w_K)]``.
Frequency sets are plain sorted float arrays, gains are complex arrays and
signals are complex arrays; the helpers below validate and normalise them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DimensionError",
    "EmptyDictionaryError",
    "SeparationError",
    "SignalFormatError",
    "RelaxationParams",
    "torus_distance",
    "as_frequencies",
    "atom",
    "build_dictionary",
    "synthesize",
    "add_noise",
    "relax_tanh",
    "relax_log",
    "relax_atan",
    "fidelity",
    "objective_full",
    "min_separation",
    "read_signal_csv",
    "write_signal_csv",
]


class DimensionError(ValueError):
    """Raised when array sizes are inconsistent or invalid."""


class EmptyDictionaryError(DimensionError):
    """Raised when a dictionary is requested for an empty frequency set."""


class SeparationError(ValueError):
    """Raised when a separation is requested for fewer than two frequencies."""


class SignalFormatError(ValueError):
    """Raised for malformed signal files.  ``row`` is 1-based, header excluded."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class RelaxationParams:
    """Sharpness ``epsilon`` of the tanh penalty and its weight ``lam``."""

    epsilon: float
    lam: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")


def torus_distance(a, b):
    """Distance on [0, 1) with wrap-around, ``min_n |a - b - n|``."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 1.0
    return np.minimum(d, 1.0 - d)


def as_frequencies(omegas, *, sort=True):
    """Reduce frequencies mod 1 and return them as a sorted float array."""
    w = np.mod(np.atleast_1d(np.asarray(omegas, dtype=float)), 1.0)
    # mod can return exactly 1.0 for tiny negative inputs
    w[w >= 1.0] = 0.0
    if sort:
        w = np.sort(w)
    return w


def atom(omega, m_count):
    """Frequency atom ``exp(-j 2 pi m omega)``, ``m = 0..m_count-1``.

    Parameters
    ----------
    omega : float
        Frequency in cycles/sample.
    m_count : int
        Atom length ``M``.

    Returns
    -------
    numpy.ndarray
        Complex vector of length ``m_count``.
    """
    if m_count < 1:
        raise DimensionError(f"atom length must be >= 1, got {m_count}")
    m = np.arange(m_count)
    return np.exp(-2j * np.pi * m * float(omega))


def build_dictionary(omegas, m_count):
    """Stack atoms for ``omegas`` column-wise into an ``M x K`` matrix."""
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    if w.size == 0:
        raise EmptyDictionaryError("cannot build a dictionary from an empty frequency set")
    if m_count < 1:
        raise DimensionError(f"atom length must be >= 1, got {m_count}")
    m = np.arange(m_count)[:, None]
    return np.exp(-2j * np.pi * m * w[None, :])


def synthesize(omegas, gains, m_count):
    """Noiseless signal ``A(omegas) @ gains``."""
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    h = np.atleast_1d(np.asarray(gains, dtype=complex))
    if w.shape != h.shape:
        raise DimensionError(f"{w.size} frequencies but {h.size} gains")
    if w.size == 0:
        return np.zeros(m_count, dtype=complex)
    return build_dictionary(w, m_count) @ h


def add_noise(signal, sigma_sq, seed):
    """Add circularly-symmetric complex Gaussian noise of total power ``sigma_sq``.

    Real and imaginary parts are independent with variance ``sigma_sq / 2``.
    The output depends only on ``(signal, sigma_sq, seed)``.
    """
    if sigma_sq < 0:
        raise ValueError(f"sigma_sq must be >= 0, got {sigma_sq}")
    y = np.asarray(signal, dtype=complex)
    if sigma_sq == 0:
        return y.copy()
    rng = np.random.default_rng(seed)
    scale = np.sqrt(sigma_sq / 2.0)
    noise = scale * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y + noise


def _ratio(x, epsilon):
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    return np.abs(x) ** 2 / epsilon


def relax_tanh(x, epsilon):
    """``tanh(|x|^2 / epsilon)``, elementwise."""
    return np.tanh(_ratio(x, epsilon))


def relax_log(x, epsilon):
    """``log(1 + |x|^2 / epsilon)`` (natural log), elementwise."""
    return np.log1p(_ratio(x, epsilon))


def relax_atan(x, epsilon):
    """``arctan(|x|^2 / epsilon)``, elementwise, not rescaled by 2/pi."""
    return np.arctan(_ratio(x, epsilon))


def fidelity(omegas, gains, y):
    """Squared residual norm ``||y - A(omegas) gains||^2``."""
    y = np.asarray(y, dtype=complex)
    r = y - synthesize(omegas, gains, y.size)
    return float(np.vdot(r, r).real)


def objective_full(omegas, gains, y, params):
    """Penalised least-squares objective.

    ``||y - A(omegas) h||^2 + lam * sum_n tanh(|h_n|^2 / epsilon)``
    """
    h = np.atleast_1d(np.asarray(gains, dtype=complex))
    penalty = float(np.sum(relax_tanh(h, params.epsilon))) if h.size else 0.0
    return fidelity(omegas, h, y) + params.lam * penalty


def min_separation(omegas):
    """Smallest pairwise torus distance of a frequency set."""
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    if w.size < 2:
        raise SeparationError("minimum separation needs at least two frequencies")
    w = np.sort(np.mod(w, 1.0))
    gaps = np.diff(w)
    wrap = 1.0 - (w[-1] - w[0])
    return float(min(gaps.min(), wrap))


def read_signal_csv(path):
    """Read a ``re,im`` CSV file into a complex vector.

    Raises
    ------
    SignalFormatError
        For a missing/incorrect header, an empty body or any row that does
        not hold exactly two finite numbers.  ``err.row`` names the
        offending 1-based data row.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SignalFormatError(f"{path}: file is empty") from None
        if [c.strip().lower() for c in header] != ["re", "im"]:
            raise SignalFormatError(f"{path}: expected header 're,im', got {','.join(header)!r}")
        values = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise SignalFormatError(
                    f"{path}: row {row_no}: expected 2 columns, got {len(row)}", row=row_no
                )
            try:
                re_, im_ = float(row[0]), float(row[1])
            except ValueError:
                raise SignalFormatError(
                    f"{path}: row {row_no}: non-numeric value {row!r}", row=row_no
                ) from None
            if not (np.isfinite(re_) and np.isfinite(im_)):
                raise SignalFormatError(f"{path}: row {row_no}: non-finite value", row=row_no)
            values.append(complex(re_, im_))
    if not values:
        raise SignalFormatError(f"{path}: no samples")
    return np.array(values, dtype=complex)


def write_signal_csv(path, y):
    """Write a complex vector as ``re,im`` CSV with 17 significant digits."""
    y = np.asarray(y, dtype=complex)
    with Path(path).open("w", newline="") as fh:
        fh.write("re,im\n")
        for v in y:
            fh.write(f"{v.real:.17g},{v.imag:.17g}\n")
