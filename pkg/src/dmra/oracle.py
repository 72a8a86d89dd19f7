"""Independent ground-truth engines for checking the estimator.

Nothing here shares code paths with the estimator beyond atom synthesis:

* ``prony_recover`` solves the noiseless problem exactly through a Hankel
  system and polynomial rooting.
* ``brute_force_l0`` and ``brute_force_tanh`` enumerate every support on a
  tiny candidate grid.
* ``vandermonde_sigma_min`` measures how conditioning collapses as atoms
  crowd together.

The ``check_*`` functions bundle these into Monte-Carlo suites that return a
:class:`CheckReport`; the command line front end runs them by name.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import build_dictionary, min_separation, synthesize, torus_distance
from .offgrid import cfar_threshold, false_alarm_probability

__all__ = [
    "OracleError",
    "RankDeficiencyError",
    "InfeasibleError",
    "PronySystem",
    "BruteForceResult",
    "CheckReport",
    "prony_system",
    "prony_recover",
    "brute_force_l0",
    "brute_force_tanh",
    "vandermonde_sigma_min",
    "sigma_min_slope",
    "check_prony",
    "check_tanh",
    "check_vandermonde",
    "check_cfar",
    "CHECKS",
]

MAX_GRID = 14
MAX_SUPPORT = 4
COND_LIMIT = 1e12
FEASIBLE_TOL = 1e-9


class OracleError(RuntimeError):
    """Base class for oracle failures."""


class RankDeficiencyError(OracleError):
    """The Hankel system is numerically singular (wrong count or coincident atoms)."""


class InfeasibleError(OracleError):
    """No support within the enumeration budget satisfies the constraint."""


@dataclass
class PronySystem:
    """Hankel system ``W rho = rhs`` whose solution gives the annihilating polynomial.

    ``W[i, j] = y[S - 1 - j + i]`` (0-based samples) and ``rhs = -y[S:2S]``.
    ``coefficients`` holds ``rho_1 .. rho_S``; ``rho_0 = 1`` is implicit.
    """

    hankel: np.ndarray
    rhs: np.ndarray
    coefficients: np.ndarray | None = None
    condition: float = float("nan")

    @property
    def polynomial(self):
        """Coefficients of ``P0(z)`` from the highest power down."""
        return np.concatenate([[1.0 + 0j], self.coefficients])


@dataclass
class BruteForceResult:
    support: list
    gains: np.ndarray
    objective_value: float
    enumerated_count: int


@dataclass
class CheckReport:
    name: str
    passed: bool
    stats: dict = field(default_factory=dict)

    def lines(self):
        head = f"{self.name}: {'PASS' if self.passed else 'FAIL'}"
        return [head] + [f"  {k} = {v}" for k, v in self.stats.items()]


def prony_system(y, s_count):
    """Build (and solve) the Hankel system from the first ``2 S`` samples."""
    y = np.asarray(y, dtype=complex)
    s = int(s_count)
    if s < 1:
        raise ValueError(f"s_count must be >= 1, got {s_count}")
    if y.size < 2 * s:
        raise ValueError(f"need M >= 2S samples, got M={y.size}, S={s}")
    i, j = np.indices((s, s))
    hankel = y[s - 1 - j + i]
    rhs = -y[s:2 * s]
    cond = float(np.linalg.cond(hankel))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise RankDeficiencyError(
            f"Hankel matrix is numerically singular (condition {cond:.3g}); "
            "wrong atom count or coincident atoms"
        )
    rho = np.linalg.solve(hankel, rhs)
    return PronySystem(hankel, rhs, rho, cond)


def _polish(y, omegas, gains, steps):
    # Gauss-Newton on ||y - A(w) h|| over (w, Re h, Im h); rooting alone
    # leaves ~1e-11 error in w, which clustered atoms amplify in h
    m = np.arange(y.size)
    best = (omegas, gains, float(np.linalg.norm(y - synthesize(omegas, gains, y.size))))
    for _ in range(steps):
        w, h, res = best
        a = build_dictionary(w, y.size)
        r = y - a @ h
        jw = (-2j * np.pi * m)[:, None] * a * h
        jac = np.concatenate([jw, a, 1j * a], axis=1)
        jr = np.concatenate([jac.real, jac.imag])
        step, *_ = np.linalg.lstsq(jr, np.concatenate([r.real, r.imag]), rcond=None)
        k = w.size
        w_new = np.mod(w + step[:k], 1.0)
        h_new = h + step[k:2 * k] + 1j * step[2 * k:]
        res_new = float(np.linalg.norm(y - synthesize(w_new, h_new, y.size)))
        if not res_new < res:
            break
        best = (w_new, h_new, res_new)
    order = np.argsort(best[0])
    return best[0][order], best[1][order]


def prony_recover(y, s_count, *, return_system=False, polish=3):
    """Exact recovery of ``S`` atoms from a noiseless signal.

    Parameters
    ----------
    y : array_like
        Noiseless samples, ``M >= 2 S``.
    s_count : int
        Number of atoms.
    polish : int
        Gauss-Newton steps on the full least-squares fit after rooting
        (0 disables).  Steps that do not lower the residual are discarded.
    return_system : bool
        Also return the :class:`PronySystem` and the largest radial
        deviation ``max | |z_s| - 1 |`` of the roots (a health diagnostic).

    Returns
    -------
    omegas : ndarray
        Sorted frequencies in [0, 1).
    gains : ndarray
        Least-squares gains on the recovered atoms.

    Raises
    ------
    RankDeficiencyError
        If the Hankel system has condition number above ``1e12``.
    """
    y = np.asarray(y, dtype=complex)
    system = prony_system(y, s_count)
    # companion-matrix eigenvalues; roots are not projected onto the circle
    z = np.roots(system.polynomial)
    omegas = np.sort(np.mod(-np.angle(z) / (2 * np.pi), 1.0))
    gains, *_ = np.linalg.lstsq(build_dictionary(omegas, y.size), y, rcond=None)
    if polish:
        omegas, gains = _polish(y, omegas, gains, polish)
    if return_system:
        radial = float(np.max(np.abs(np.abs(z) - 1.0)))
        return omegas, gains, system, radial
    return omegas, gains


def _check_budget(grid, max_support):
    if grid.size > MAX_GRID:
        raise ValueError(f"grid has {grid.size} candidates, budget is {MAX_GRID}")
    if not 0 <= max_support <= MAX_SUPPORT:
        raise ValueError(f"max_support must lie in [0, {MAX_SUPPORT}], got {max_support}")


def _supports(n, max_support):
    for k in range(max_support + 1):
        yield from itertools.combinations(range(n), k)


def _fit(y, dictionary, support):
    if not support:
        return np.zeros(0, dtype=complex), float(np.linalg.norm(y))
    a = dictionary[:, list(support)]
    # lstsq returns the least-norm solution when columns are dependent
    h, *_ = np.linalg.lstsq(a, y, rcond=None)
    return h, float(np.linalg.norm(y - a @ h))


def brute_force_l0(y, grid, delta, *, max_support=MAX_SUPPORT):
    """Smallest support on ``grid`` whose least-squares residual is ``<= delta``.

    Supports are enumerated by increasing cardinality; within the first
    feasible cardinality the lowest residual wins, then the lexicographically
    smallest support.  ``objective_value`` is the cardinality.
    """
    y = np.asarray(y, dtype=complex)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    _check_budget(grid, max_support)
    dictionary = build_dictionary(grid, y.size) if grid.size else np.zeros((y.size, 0))
    count = 0
    for k in range(max_support + 1):
        best = None
        for support in itertools.combinations(range(grid.size), k):
            count += 1
            h, res = _fit(y, dictionary, support)
            if res <= delta and (best is None or res < best[2]):
                best = (support, h, res)
        if best is not None:
            return BruteForceResult(list(best[0]), best[1], float(k), count)
    raise InfeasibleError(f"no support of size <= {max_support} reaches residual {delta:g}")


def brute_force_tanh(y, grid, epsilon, *, max_support=MAX_SUPPORT, tol=FEASIBLE_TOL):
    """Global minimiser of ``sum tanh(|h_n|^2 / epsilon)`` subject to ``y = A h``.

    Feasibility means least-squares residual ``<= tol * max(1, ||y||)``.
    Each feasible support is scored with its least-norm gains.  Ties, up to
    a relative ``1e-12``, go to the smaller support, then the lexicographically
    smaller one; the reported support keeps only atoms with nonzero score.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    y = np.asarray(y, dtype=complex)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    _check_budget(grid, max_support)
    dictionary = build_dictionary(grid, y.size) if grid.size else np.zeros((y.size, 0))
    limit = tol * max(1.0, float(np.linalg.norm(y)))
    best = None
    count = 0
    for support in _supports(grid.size, max_support):
        count += 1
        h, res = _fit(y, dictionary, support)
        if res > limit:
            continue
        value = float(np.sum(np.tanh(np.abs(h) ** 2 / epsilon)))
        # enumeration order already is (cardinality, lexicographic)
        if best is None or value < best[2] - 1e-12 * max(1.0, abs(best[2])):
            best = (support, h, value)
    if best is None:
        raise InfeasibleError(f"no support of size <= {max_support} fits y exactly")
    support, h, value = best
    keep = np.tanh(np.abs(h) ** 2 / epsilon) > 0
    return BruteForceResult([s for s, k in zip(support, keep) if k], h[keep], value, count)


def vandermonde_sigma_min(omegas, m_count):
    """Smallest singular value of the ``M x S`` Vandermonde matrix ``A(omegas)``."""
    a = build_dictionary(np.atleast_1d(omegas), m_count)
    return float(np.linalg.svd(a, compute_uv=False)[-1])


def sigma_min_slope(s_count, m_count=100, mus=None, start=0.3):
    """Log-log slope of ``sigma_min / sqrt(M)`` against the spacing ``mu``.

    Atoms are equispaced ``mu / M`` apart starting at ``start``; ``mus``
    defaults to ten log-spaced values in [0.1, 1].
    """
    mus = np.logspace(-1, 0, 10) if mus is None else np.asarray(mus, dtype=float)
    vals = [
        vandermonde_sigma_min(start + np.arange(s_count) * mu / m_count, m_count) / np.sqrt(m_count)
        for mu in mus
    ]
    slope = np.polyfit(np.log(mus), np.log(vals), 1)[0]
    return float(slope)


def _random_instance(rng, s, m, min_sep):
    while True:
        w = np.sort(rng.uniform(0, 1, s))
        if s < 2 or min_separation(w) >= min_sep:
            break
    h = rng.standard_normal(s) + 1j * rng.standard_normal(s)
    return w, h


def _matched_freq_error(w_true, w_hat):
    # both sorted on [0, 1); allow a wrap by trying every rotation
    best = np.inf
    for k in range(w_true.size):
        best = min(best, float(np.max(torus_distance(w_true, np.roll(w_hat, k)))))
    return best


def check_prony(trials=200, seed=0, *, tol=1e-8, min_sep=1e-3):
    """Round-trip random noiseless instances (S <= 4, M in [2S, 16]) through Prony.

    Instances are drawn with min separation >= ``min_sep`` (rejection) and
    gains with moduli of order one.
    """
    rng = np.random.default_rng(seed)
    worst_w = worst_h = 0.0
    failures = 0
    for _ in range(trials):
        s = int(rng.integers(1, 5))
        m = int(rng.integers(2 * s, 17))
        w, h = _random_instance(rng, s, m, min_sep)
        try:
            w_hat, h_hat = prony_recover(synthesize(w, h, m), s)
        except RankDeficiencyError:
            failures += 1
            continue
        order = np.argsort(w)
        err_w = _matched_freq_error(w[order], w_hat)
        # align gains by nearest recovered frequency
        idx = [int(np.argmin(torus_distance(w_hat, wi))) for wi in w[order]]
        err_h = float(np.max(np.abs(h_hat[idx] - h[order])))
        worst_w, worst_h = max(worst_w, err_w), max(worst_h, err_h)
        if err_w >= tol or err_h >= tol:
            failures += 1
    stats = {"trials": trials, "failures": failures, "max_omega_error": worst_w, "max_gain_error": worst_h}
    return CheckReport("prony", failures == 0, stats)


def tanh_instance(rng, grid_size=None, max_true=3, m_count=16):
    """Random tiny on-grid instance: (y, grid, true support indices, true gains)."""
    n = int(rng.integers(6, 13)) if grid_size is None else int(grid_size)
    grid = np.sort(rng.choice(4 * n, size=n, replace=False) / (4 * n))
    k = int(rng.integers(1, max_true + 1))
    support = np.sort(rng.choice(n, size=k, replace=False))
    mag = rng.uniform(0.5, 2.0, k)
    h = mag * np.exp(2j * np.pi * rng.uniform(size=k))
    y = synthesize(grid[support], h, m_count)
    return y, grid, support, h


def check_tanh(trials=30, seed=0, *, factors=(1e-6, 1e-8, 1e-10)):
    """Compare tanh-sum and l0 supports on tiny grids for small epsilon.

    ``epsilon = f * min |h|^2`` for each factor ``f``; any disagreement fails.
    """
    rng = np.random.default_rng(seed)
    mismatches = 0
    recovered = 0
    for _ in range(trials):
        y, grid, support, h = tanh_instance(rng)
        l0 = brute_force_l0(y, grid, FEASIBLE_TOL * max(1.0, float(np.linalg.norm(y))), max_support=3)
        recovered += l0.support == list(support)
        h_min = float(np.min(np.abs(h) ** 2))
        for f in factors:
            th = brute_force_tanh(y, grid, f * h_min, max_support=3)
            if th.support != l0.support:
                mismatches += 1
    stats = {"trials": trials, "epsilon_factors": list(factors), "mismatches": mismatches,
             "l0_equals_truth": recovered}
    return CheckReport("tanh", mismatches == 0, stats)


def check_vandermonde(m_count=100, tolerance=0.5):
    """Slope of ``sigma_min / sqrt(M)`` vs ``mu`` for S = 2, 3 should be near ``S - 1``."""
    slopes = {s: sigma_min_slope(s, m_count) for s in (2, 3)}
    ok = all(abs(v - (s - 1)) <= tolerance for s, v in slopes.items())
    grid_ok = abs(vandermonde_sigma_min(np.arange(3) / m_count, m_count) - np.sqrt(m_count)) < 1e-9
    stats = {f"slope_S{s}": v for s, v in slopes.items()}
    stats["grid_subset_sigma_min_is_sqrt_M"] = grid_ok
    return CheckReport("vandermonde", ok and grid_ok, stats)


def check_cfar(trials=2000, seed=0, *, sigma_sq=1.0, m_count=100, p_fa=0.01, n_sigma=3.0):
    """Monte-Carlo false-alarm rate of the residual-peak test on pure noise.

    Passes when the empirical rate is within ``n_sigma`` binomial standard
    deviations of the exact rate.
    """
    rng = np.random.default_rng(seed)
    t_v = cfar_threshold(sigma_sq, m_count, p_fa)
    exact = false_alarm_probability(t_v, sigma_sq, m_count)
    noise = np.sqrt(sigma_sq / 2) * (
        rng.standard_normal((trials, m_count)) + 1j * rng.standard_normal((trials, m_count))
    )
    peaks = np.max(np.abs(np.fft.ifft(noise, axis=1)) ** 2, axis=1)
    rate = float(np.mean(peaks > t_v))
    sd = float(np.sqrt(exact * (1 - exact) / trials))
    stats = {"trials": trials, "t_v": t_v, "exact_rate": exact, "empirical_rate": rate,
             "binomial_sd": sd, "z": (rate - exact) / sd if sd > 0 else float("nan")}
    return CheckReport("cfar", abs(rate - exact) <= n_sigma * sd, stats)


CHECKS = {
    "prony": check_prony,
    "tanh": check_tanh,
    "vandermonde": check_vandermonde,
    "cfar": check_cfar,
}
