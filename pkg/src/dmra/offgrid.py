"""Stage 2: continuous refinement of amplitudes, frequencies and phases.

Gains are written in polar form ``h_n = nu_n exp(-j phi_n)`` so the model is

    y_hat_m = sum_n nu_n exp(-j (2 pi m w_n + phi_n))

and the objective ``||y - y_hat||^2 + lam sum tanh(nu^2 / eps)`` is smooth in
the real vector ``xi = [nu, w, phi]``.  It is minimised with L-BFGS, then
sparsity selector C merges near-coincident atoms and drops weak ones, and a
CFAR test on the residual spectrum decides whether the fit reached the noise
floor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .core import RelaxationParams, build_dictionary, synthesize, torus_distance

__all__ = [
    "OptimizerError",
    "OffGridVariables",
    "MergeRecord",
    "OffGridResult",
    "split_gains",
    "combine_gains",
    "objective_xi",
    "gradient_xi",
    "quasi_newton_minimize",
    "merge_close",
    "threshold_c",
    "selector_c",
    "cfar_threshold",
    "false_alarm_probability",
    "residual_peak",
    "off_grid_estimate",
]

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


class OptimizerError(RuntimeError):
    """The continuous solver hit a non-finite objective or gradient."""


def split_gains(h):
    """Polar split ``(nu, phi)`` with ``h = nu exp(-j phi)``, ``phi`` in [0, 2 pi)."""
    h = np.atleast_1d(np.asarray(h, dtype=complex))
    nu = np.abs(h)
    phi = np.mod(-np.angle(h), TWO_PI)
    phi[nu == 0] = 0.0
    phi[phi >= TWO_PI] = 0.0
    return nu, phi


def combine_gains(nu, phi):
    return np.asarray(nu, dtype=float) * np.exp(-1j * np.asarray(phi, dtype=float))


@dataclass(frozen=True)
class OffGridVariables:
    nu: np.ndarray
    omegas: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        if not (self.nu.shape == self.omegas.shape == self.phi.shape):
            raise ValueError("nu, omegas and phi must have equal length")

    @classmethod
    def from_gains(cls, omegas, gains):
        nu, phi = split_gains(gains)
        return cls(nu, np.atleast_1d(np.asarray(omegas, dtype=float)).copy(), phi)

    @classmethod
    def unpack(cls, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.size % 3:
            raise ValueError("packed vector length must be a multiple of 3")
        n = xi.size // 3
        return cls(xi[:n].copy(), xi[n : 2 * n].copy(), xi[2 * n :].copy())

    def pack(self):
        return np.concatenate([self.nu, self.omegas, self.phi])

    @property
    def gains(self):
        return combine_gains(self.nu, self.phi)

    def __len__(self):
        return self.nu.size


def _model(nu, omegas, phi, m_count):
    m = np.arange(m_count)[:, None]
    e = np.exp(-1j * (TWO_PI * m * omegas[None, :] + phi[None, :]))
    return e, e @ nu


def _value_and_grad(nu, omegas, phi, y, lam, epsilon):
    m_count = y.size
    e, yhat = _model(nu, omegas, phi, m_count)
    r = y - yhat
    t = np.tanh(nu * nu / epsilon)
    value = float(np.vdot(r, r).real) + lam * float(np.sum(t))
    # c_n = sum_m conj(r_m) e_mn, d_n = sum_m m conj(r_m) e_mn
    rc = r.conj()
    c = rc @ e
    d = (np.arange(m_count) * rc) @ e
    g_nu = -2.0 * c.real + lam * (1.0 - t * t) * 2.0 * nu / epsilon
    g_w = -2.0 * TWO_PI * nu * d.imag
    g_phi = -2.0 * nu * c.imag
    return value, g_nu, g_w, g_phi


def _check_lengths(xi, y):
    y = np.asarray(y, dtype=complex)
    if y.ndim != 1:
        raise ValueError("signal must be one-dimensional")
    return y


def objective_xi(xi, y, params):
    """``||y - Psi(w, phi) nu||^2 + lam sum tanh(nu^2 / eps)``."""
    y = _check_lengths(xi, y)
    value, *_ = _value_and_grad(xi.nu, xi.omegas, xi.phi, y, params.lam, params.epsilon)
    return value


def gradient_xi(xi, y, params):
    """Analytic gradient of :func:`objective_xi`, packed as ``[d_nu, d_w, d_phi]``."""
    y = _check_lengths(xi, y)
    _, g_nu, g_w, g_phi = _value_and_grad(xi.nu, xi.omegas, xi.phi, y, params.lam, params.epsilon)
    return np.concatenate([g_nu, g_w, g_phi])


def _canonical(nu, omegas, phi):
    neg = nu < 0
    nu = np.abs(nu)
    phi = np.where(neg, phi + np.pi, phi)
    phi = np.mod(phi, TWO_PI)
    phi[phi >= TWO_PI] = 0.0
    omegas = np.mod(omegas, 1.0)
    omegas[omegas >= 1.0] = 0.0
    return nu, omegas, phi


def quasi_newton_minimize(xi0, y, params, *, tolerance=1e-9, max_iter=500):
    """Minimise :func:`objective_xi` from ``xi0`` with L-BFGS.

    The search runs in rescaled coordinates (amplitudes over the signal RMS,
    frequencies in DFT bins, objective per sample over signal power) so the
    three blocks have comparable curvature; ``tolerance`` applies to the
    infinity norm of that rescaled gradient.

    Returns
    -------
    OffGridVariables
        Canonical form: ``nu >= 0``, frequencies in [0, 1), phases in
        [0, 2 pi).  Never worse than ``xi0``.
    dict
        Solver diagnostics (``nit``, ``nfev``, ``message``, ``value``).
    """
    y = np.asarray(y, dtype=complex)
    m_count = y.size
    n = len(xi0)
    lam, eps = params.lam, params.epsilon
    power = float(np.vdot(y, y).real) / m_count
    scale = np.sqrt(power) if power > 0 else max(float(np.max(xi0.nu, initial=0.0)), 1.0)
    fscale = scale * scale * m_count

    def fun(z):
        nu = z[:n] * scale
        w = z[n : 2 * n] / m_count
        phi = z[2 * n :]
        value, g_nu, g_w, g_phi = _value_and_grad(nu, w, phi, y, lam, eps)
        if not np.isfinite(value):
            raise OptimizerError(f"objective became non-finite ({value})")
        grad = np.concatenate([g_nu * scale, g_w / m_count, g_phi]) / fscale
        if not np.all(np.isfinite(grad)):
            raise OptimizerError("gradient became non-finite")
        return value / fscale, grad

    z0 = np.concatenate([xi0.nu / scale, xi0.omegas * m_count, xi0.phi])
    f0, _ = fun(z0)
    res = scipy.optimize.minimize(
        fun,
        z0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": tolerance, "ftol": 0.0, "maxcor": 20},
    )
    z = res.x if res.fun <= f0 else z0
    nu, w, phi = _canonical(z[:n] * scale, z[n : 2 * n] / m_count, z[2 * n :].copy())
    info = {
        "nit": int(res.nit),
        "nfev": int(res.nfev),
        "message": str(res.message),
        "value": float(min(res.fun, f0) * fscale),
    }
    return OffGridVariables(nu, w, phi), info


@dataclass(frozen=True)
class MergeRecord:
    kept: float
    absorbed: float
    tau: float
    merged_energy: float


def _merge_pair(w_a, e_a, w_b, e_b):
    # w_b is unwrapped to sit within half a cycle above w_a
    tot = e_a + e_b
    tau = 0.5 if tot == 0 else e_a / tot
    w_new = tau * w_a + (1.0 - tau) * w_b
    e_new = tau * e_a + (1.0 - tau) * e_b
    return w_new, e_new, tau


def merge_close(omegas, energies, beta):
    """Merge adjacent atoms closer than ``beta`` into energy-weighted averages.

    Sweeps left to right over the sorted list (including the wrap-around
    pair across 0) and repeats until every adjacent torus distance is at
    least ``beta``.

    Returns
    -------
    tuple
        ``(omegas, energies, records)`` with ``records`` a list of
        :class:`MergeRecord`.
    """
    w = np.mod(np.asarray(omegas, dtype=float), 1.0)
    e = np.asarray(energies, dtype=float)
    if w.shape != e.shape:
        raise ValueError("omegas and energies must have equal length")
    order = np.argsort(w, kind="stable")
    w = list(w[order])
    e = list(e[order])
    records = []
    changed = True
    while changed and len(w) > 1:
        changed = False
        k = 0
        while k < len(w) - 1:
            if w[k + 1] - w[k] < beta:
                w_new, e_new, tau = _merge_pair(w[k], e[k], w[k + 1], e[k + 1])
                records.append(MergeRecord(w[k], w[k + 1], tau, e_new))
                w[k], e[k] = w_new, e_new
                del w[k + 1], e[k + 1]
                changed = True
            k += 1
        if len(w) > 1 and (w[0] + 1.0) - w[-1] < beta:
            w_new, e_new, tau = _merge_pair(w[-1], e[-1], w[0] + 1.0, e[0])
            records.append(MergeRecord(w[-1], w[0], tau, e_new))
            del w[-1], e[-1]
            w[0], e[0] = w_new % 1.0, e_new
            w_arr = np.array(w)
            order = np.argsort(w_arr, kind="stable")
            w = list(w_arr[order])
            e = list(np.array(e)[order])
            changed = True
    return np.array(w, dtype=float), np.array(e, dtype=float), records


def threshold_c(gains, gamma_c):
    """``gamma_c * ||h||^2 / N`` over the gains entering the selector."""
    h = np.atleast_1d(np.asarray(gains))
    if h.size == 0:
        raise ValueError("threshold of an empty gain vector")
    return gamma_c * float(np.sum(np.abs(h) ** 2)) / h.size


def selector_c(omegas, gains, beta, gamma_c):
    """Merge close atoms, then keep those with energy strictly above ``psi_c``.

    ``psi_c`` is computed from the gains before merging.

    Returns
    -------
    tuple
        ``(omegas, energies, records)`` of the survivors.
    """
    gains = np.atleast_1d(np.asarray(gains, dtype=complex))
    if gains.size == 0:
        return np.empty(0), np.empty(0), []
    w, e, records = merge_close(omegas, np.abs(gains) ** 2, beta)
    psi = threshold_c(gains, gamma_c)
    keep = e > psi
    return w[keep], e[keep], records


def cfar_threshold(sigma_sq, m_count, p_fa):
    """Residual-peak threshold with false-alarm rate ``p_fa``.

    ``sigma^2 (ln M - ln(-ln(1 - p_fa))) / M``
    """
    if not 0 < p_fa < 1:
        raise ValueError(f"p_fa must lie in (0, 1), got {p_fa}")
    if m_count < 2:
        raise ValueError(f"m_count must be >= 2, got {m_count}")
    return sigma_sq * (np.log(m_count) - np.log(-np.log1p(-p_fa))) / m_count


def false_alarm_probability(t_v, sigma_sq, m_count):
    """Exact ``P{peak > t_v}`` for a pure-noise residual."""
    return 1.0 - (1.0 - np.exp(-m_count * t_v / sigma_sq)) ** m_count


def residual_peak(y, xi):
    """Largest canonical-grid energy ``max_k |(A^H r)_k / M|^2`` of the residual."""
    y = np.asarray(y, dtype=complex)
    r = y - synthesize(xi.omegas, xi.gains, y.size) if len(xi) else y
    return float(np.max(np.abs(np.fft.ifft(r)) ** 2))


def _next_beta(beta, mult, beta0):
    # growth is capped at the initial merge distance so true pairs near beta0 survive
    return min(beta * mult, beta0)


def residual_gains(y, omegas, gains, candidates):
    """Matched-filter gains ``A^H(c) r / M`` of ``candidates`` against the fit residual."""
    y = np.asarray(y, dtype=complex)
    r = y - synthesize(omegas, gains, y.size) if np.size(omegas) else y
    return build_dictionary(candidates, y.size).conj().T @ r / y.size


def _refit_gains(y, omegas):
    a = build_dictionary(omegas, y.size)
    h, *_ = np.linalg.lstsq(a, y, rcond=1e-12)
    return h


@dataclass
class OffGridResult:
    omegas: np.ndarray
    gains: np.ndarray
    residual_peak: float
    accepted: bool
    trace: dict = field(default_factory=dict)


def off_grid_estimate(y, omega1, gains1, config, *, lam, epsilon, t_v, beta0):
    """Run Stage 2 from the Stage-1 output.

    Parameters
    ----------
    y : array_like
    omega1, gains1 : array_like
        Stage-1 frequencies and gains; they also seed every re-augmentation.
    config : DmraConfig
        Uses ``gamma_c``, ``max_outer``, ``qn_tolerance``, ``qn_max_iter``
        and ``converge_tol``.
    lam : float
    epsilon : float or callable
        Tanh sharpness or a map from outer iteration to sharpness.
    t_v : float
        CFAR threshold on the residual peak.
    beta0 : float
        Initial merge distance in cycles/sample.

    Returns
    -------
    OffGridResult
        The accepted fit with the fewest atoms (lowest residual peak among
        ties).  If nothing was ever accepted, the fit with the lowest
        residual peak, flagged ``accepted=False``.
    """
    y = np.asarray(y, dtype=complex)
    omega1 = np.atleast_1d(np.asarray(omega1, dtype=float))
    gains1 = np.atleast_1d(np.asarray(gains1, dtype=complex))
    if omega1.size == 0:
        raise ValueError("Stage 2 needs a nonempty initial frequency set")
    eps_at = epsilon if callable(epsilon) else (lambda _i: float(epsilon))

    gamma_c, beta = float(config.gamma_c), float(beta0)
    cur_w, cur_h = omega1.copy(), gains1.copy()
    n_best = omega1.size
    best = None
    fallback = None
    prev_accepted = None
    trace = {
        "atoms": [], "residual_peak": [], "accepted": [], "gamma_c": [], "beta": [],
        "objective": [], "qn_iterations": [], "epsilon": [], "t_v": float(t_v),
    }
    for i in range(config.max_outer):
        params = RelaxationParams(eps_at(i), lam)
        xi, info = quasi_newton_minimize(
            OffGridVariables.from_gains(cur_w, cur_h), y, params,
            tolerance=config.qn_tolerance, max_iter=config.qn_max_iter,
        )
        order = np.argsort(xi.omegas, kind="stable")
        w_hat, h_hat = xi.omegas[order], xi.gains[order]
        peak = residual_peak(y, xi)
        accepted = peak <= t_v
        trace["atoms"].append(int(w_hat.size))
        trace["residual_peak"].append(peak)
        trace["accepted"].append(bool(accepted))
        trace["objective"].append(info["value"])
        trace["qn_iterations"].append(info["nit"])
        trace["epsilon"].append(params.epsilon)

        if fallback is None or peak < fallback[2]:
            fallback = (w_hat, h_hat, peak)
        if accepted:
            if w_hat.size <= n_best:
                n_best = w_hat.size
                if best is None or w_hat.size < best[0].size or peak < best[2]:
                    best = (w_hat, h_hat, peak)
            mult = 1.1
        else:
            mult = 0.8

        stop = False
        if accepted and prev_accepted is not None and prev_accepted.size == w_hat.size:
            if np.max(torus_distance(prev_accepted, w_hat)) <= config.converge_tol:
                stop = True
        prev_accepted = w_hat if accepted else None

        # re-seeded Stage-1 atoms carry what the current fit leaves unexplained
        aug_w = np.concatenate([omega1, w_hat])
        aug_h = np.concatenate([residual_gains(y, w_hat, h_hat, omega1), h_hat])
        sel_w, _, _ = selector_c(aug_w, aug_h, _next_beta(beta, mult, beta0), gamma_c * mult)
        if sel_w.size == 0:
            mult = 0.8
            log.debug("selector C removed every atom; shrinking thresholds")
            sel_w, sel_h = aug_w, aug_h
        else:
            sel_h = _refit_gains(y, sel_w)
        gamma_c *= mult
        beta = _next_beta(beta, mult, beta0)
        trace["gamma_c"].append(gamma_c)
        trace["beta"].append(beta)
        if stop:
            break
        cur_w, cur_h = sel_w, sel_h

    trace["outer_iterations"] = len(trace["atoms"])
    if best is not None:
        return OffGridResult(best[0], best[1], best[2], True, trace)
    log.info("Stage 2 never passed the CFAR test; returning the lowest-residual fit")
    return OffGridResult(fallback[0], fallback[1], fallback[2], False, trace)
