"""Stage 1: majorization-minimization on a locally refined grid.

The tanh penalty is concave in ``|h|^2``, so its tangent at the current
iterate majorizes it.  Minimising the resulting quadratic surrogate gives a
reweighted ridge solve

    h_new = (G + (lam / eps) diag(w))^{-1} A^H y,   w = 1 - tanh^2(|h|^2 / eps)

after which sparsity selector B drops every atom whose energy does not exceed
``gamma_b`` times the mean energy.  The Gram matrix ``G`` and projection
``A^H y`` are computed once for the refined grid; later iterations slice them.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import RelaxationParams, build_dictionary, torus_distance

__all__ = [
    "SingularSystemError",
    "RefinedGrid",
    "MMState",
    "OnGridResult",
    "refine_grid",
    "refine_grid_progressive",
    "mm_weights",
    "mm_update",
    "surrogate_q",
    "objective_from_state",
    "threshold_b",
    "selector_b",
    "on_grid_estimate",
]

log = logging.getLogger(__name__)

_DUP_TOL = 1e-12


class SingularSystemError(np.linalg.LinAlgError):
    """The reweighted normal matrix could not be factorised."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


@dataclass(frozen=True)
class RefinedGrid:
    frequencies: np.ndarray
    refinement_factor: int
    parent: np.ndarray


def _dedupe_sorted(w):
    w = np.sort(np.mod(w, 1.0))
    w[w >= 1.0] = 0.0
    w = np.sort(w)
    if w.size < 2:
        return w
    keep = np.ones(w.size, dtype=bool)
    last = w[0]
    for i in range(1, w.size):
        if torus_distance(w[i], last) < _DUP_TOL:
            keep[i] = False
        else:
            last = w[i]
    # wrap-around duplicate of the first point
    if keep.sum() > 1 and torus_distance(w[keep][-1], w[0]) < _DUP_TOL:
        keep[np.flatnonzero(keep)[-1]] = False
    return w[keep]


def refine_grid(parent, gamma, m_count):
    """Add ``w +- m / (2 gamma + 1) / M`` for ``m = 0..gamma`` around each parent."""
    parent = np.atleast_1d(np.asarray(parent, dtype=float))
    if parent.size == 0:
        raise ValueError("cannot refine an empty frequency set")
    if gamma < 0:
        raise ValueError(f"refinement factor must be >= 0, got {gamma}")
    step = 1.0 / ((2 * gamma + 1) * m_count)
    offsets = np.arange(-gamma, gamma + 1) * step
    points = (parent[:, None] + offsets[None, :]).ravel()
    return RefinedGrid(_dedupe_sorted(points), int(gamma), np.sort(np.mod(parent, 1.0)))


def refine_grid_progressive(parent, rounds, m_count):
    """``rounds`` successive factor-3 refinements (spacing ``1 / (3^r M)``)."""
    w = np.atleast_1d(np.asarray(parent, dtype=float))
    for r in range(1, rounds + 1):
        step = 1.0 / (3**r * m_count)
        w = _dedupe_sorted((w[:, None] + np.array([-step, 0.0, step])[None, :]).ravel())
    return RefinedGrid(w, int((3**rounds - 1) // 2), np.sort(np.mod(parent, 1.0)))


@dataclass
class MMState:
    """Working set of one Stage-1 run.

    ``gram`` and ``projected`` cover the whole stage-initial grid ``grid``;
    ``active`` indexes the atoms still in play and ``gains`` is aligned with
    it.
    """

    grid: np.ndarray
    gram: np.ndarray
    projected: np.ndarray
    y_energy: float
    active: np.ndarray
    gains: np.ndarray

    @classmethod
    def build(cls, y, grid, gains=None):
        y = np.asarray(y, dtype=complex)
        grid = np.asarray(grid, dtype=float)
        a = build_dictionary(grid, y.size)
        gram = a.conj().T @ a
        projected = a.conj().T @ y
        if gains is None:
            gains = projected / y.size
        return cls(
            grid=grid,
            gram=gram,
            projected=projected,
            y_energy=float(np.vdot(y, y).real),
            active=np.arange(grid.size),
            gains=np.asarray(gains, dtype=complex),
        )

    @property
    def omegas(self):
        return self.grid[self.active]

    def sub_gram(self):
        return self.gram[np.ix_(self.active, self.active)]

    def sub_projected(self):
        return self.projected[self.active]


@dataclass
class OnGridResult:
    omegas: np.ndarray
    gains: np.ndarray
    grid: RefinedGrid
    trace: dict = field(default_factory=dict)


def mm_weights(gains, epsilon):
    """Tangent slopes ``1 - tanh^2(|h|^2 / eps)`` of the tanh penalty."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    t = np.tanh(np.abs(np.asarray(gains)) ** 2 / epsilon)
    return 1.0 - t * t


def _solve_hermitian(mat, rhs, on_singular):
    try:
        c, lower = scipy.linalg.cho_factor(mat, lower=True, check_finite=False)
        d = np.abs(np.diag(c)) ** 2
        if d.min() > 1e-15 * d.max():
            return scipy.linalg.cho_solve((c, lower), rhs, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    if on_singular == "raise":
        cond = float(np.linalg.cond(mat))
        raise SingularSystemError(
            f"reweighted normal matrix ({mat.shape[0]}x{mat.shape[0]}) is singular "
            f"to working precision, condition number ~{cond:.3g}",
            condition=cond,
        )
    sol, *_ = scipy.linalg.lstsq(mat, rhs, cond=1e-13, check_finite=False)
    return sol


def mm_update(state, params, on_singular="raise", ridge=0.0):
    """One MM step on the active set; returns the new gains.

    Parameters
    ----------
    state : MMState
        Anchor gains are ``state.gains``.
    params : RelaxationParams
    on_singular : {"raise", "lstsq"}
        What to do when the Cholesky factorisation fails or is numerically
        singular: raise :class:`SingularSystemError` or fall back to a
        rank-revealing least-squares solve.
    ridge : float
        Extra constant added to the diagonal (0 gives the plain MM step).
    """
    if state.active.size == 0:
        raise ValueError("MM update on an empty active set")
    w = mm_weights(state.gains, params.epsilon)
    mat = state.sub_gram().copy()
    mat[np.diag_indices_from(mat)] += (params.lam / params.epsilon) * w + ridge
    return _solve_hermitian(mat, state.sub_projected(), on_singular)


def _fidelity_from_state(h, state):
    g = state.sub_gram()
    b = state.sub_projected()
    val = state.y_energy - 2.0 * np.vdot(h, b).real + np.vdot(h, g @ h).real
    return max(float(val), 0.0)


def objective_from_state(h, state, params):
    """Penalised objective at ``h`` over the active atoms, via the cached Gram."""
    h = np.asarray(h, dtype=complex)
    pen = float(np.sum(np.tanh(np.abs(h) ** 2 / params.epsilon)))
    return _fidelity_from_state(h, state) + params.lam * pen


def surrogate_q(h, anchor, state, params):
    """Quadratic majorizer of the objective at ``h``, touching at ``anchor``."""
    h = np.asarray(h, dtype=complex)
    anchor = np.asarray(anchor, dtype=complex)
    if h.shape != anchor.shape or h.size != state.active.size:
        raise ValueError("h, anchor and the active set must have equal length")
    e_anchor = np.abs(anchor) ** 2
    t = np.tanh(e_anchor / params.epsilon)
    tangent = (1.0 - t * t) * (np.abs(h) ** 2 - e_anchor) / params.epsilon
    return _fidelity_from_state(h, state) + params.lam * float(np.sum(t) + np.sum(tangent))


def threshold_b(gains, gamma_b):
    """``gamma_b * ||h||^2 / N``."""
    h = np.asarray(gains)
    if h.size == 0:
        raise ValueError("threshold of an empty gain vector")
    if not 0 < gamma_b < 1:
        raise ValueError(f"gamma_b must lie in (0, 1), got {gamma_b}")
    return gamma_b * float(np.sum(np.abs(h) ** 2)) / h.size


def selector_b(state, new_gains, psi_b):
    """Keep atoms with ``|h|^2 > psi_b``; caches are shared, not copied."""
    energy = np.abs(np.asarray(new_gains)) ** 2
    if energy.size != state.active.size:
        raise ValueError("gain vector does not match the active set")
    keep = energy > psi_b
    ties = int(np.count_nonzero(energy == psi_b))
    if ties:
        log.debug("selector B: %d atom(s) exactly at threshold dropped", ties)
    return dataclasses.replace(state, active=state.active[keep], gains=np.asarray(new_gains)[keep])


def _as_schedule(epsilon):
    if callable(epsilon):
        return epsilon
    return lambda _step: float(epsilon)


def on_grid_estimate(y, omega0, config, *, lam, epsilon, on_singular="lstsq", ridge=0.0):
    """Run Stage 1 from the preprocessing selection ``omega0``.

    Parameters
    ----------
    y : array_like
        Observed signal.
    omega0 : array_like
        Nonempty set of canonical-grid frequencies.
    config : DmraConfig
        Uses ``gamma``, ``progressive_rounds``, ``gamma_b``, ``s_prior`` and
        ``max_mm_iter``.
    lam : float
        Penalty weight, fixed during the stage.
    epsilon : float or callable
        Tanh sharpness, or a map from MM iteration index to sharpness.
    ridge : float
        Diagonal loading of every MM solve.

    Returns
    -------
    OnGridResult
        Surviving frequencies with gains re-solved on exactly that set.
    """
    y = np.asarray(y, dtype=complex)
    omega0 = np.atleast_1d(np.asarray(omega0, dtype=float))
    if omega0.size == 0:
        raise ValueError("Stage 1 needs a nonempty initial frequency set")
    eps_at = _as_schedule(epsilon)
    if config.progressive_rounds > 0:
        grid = refine_grid_progressive(omega0, config.progressive_rounds, y.size)
    else:
        grid = refine_grid(omega0, config.gamma, y.size)
    state = MMState.build(y, grid.frequencies)

    trace = {"grid_sizes": [int(state.active.size)], "objective": [], "epsilon": [], "break": None}
    n = state.active.size
    it = 0
    gains_current = False
    while n > config.s_prior:
        if it >= config.max_mm_iter:
            trace["break"] = "max_mm_iter"
            log.info("Stage 1 hit the MM iteration cap (%d)", config.max_mm_iter)
            break
        params = RelaxationParams(eps_at(it), lam)
        h_new = mm_update(state, params, on_singular=on_singular, ridge=ridge)
        trace["objective"].append(objective_from_state(h_new, state, params))
        trace["epsilon"].append(params.epsilon)
        psi_b = threshold_b(h_new, config.gamma_b)
        nxt = selector_b(state, h_new, psi_b)
        it += 1
        if nxt.active.size == n or nxt.active.size == 0:
            state.gains = h_new
            gains_current = True
            trace["break"] = "no_removal" if nxt.active.size == n else "empty_selection"
            if n > config.s_prior:
                log.info("Stage 1 stopped with %d atoms > prior sparsity %d", n, config.s_prior)
            break
        state = nxt
        n = state.active.size
        trace["grid_sizes"].append(int(n))
    if not gains_current:
        params = RelaxationParams(eps_at(it), lam)
        state.gains = mm_update(state, params, on_singular=on_singular, ridge=ridge)
    trace["iterations"] = it
    return OnGridResult(omegas=state.omegas.copy(), gains=state.gains.copy(), grid=grid, trace=trace)
