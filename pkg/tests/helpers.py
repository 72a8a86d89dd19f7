"""Shared oracles for the test suite."""

import numpy as np

from dmra.offgrid import OffGridVariables, gradient_xi, objective_xi


def central_difference_error(xi, y, params, rel_step=1e-6):
    """Per-block relative error of the analytic gradient against central differences.

    Each coordinate uses step ``rel_step * max(1, |x_i|)``.  A block's error is
    ``max |g - g_fd| / max(max |g_fd|, 1e-6 * max |g_fd over all blocks|)`` so a
    block that is legitimately near zero is judged on the overall gradient scale.
    """
    x0 = xi.pack()
    n = len(xi)
    fd = np.empty_like(x0)
    for i in range(x0.size):
        h = rel_step * max(1.0, abs(x0[i]))
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        fp = objective_xi(OffGridVariables.unpack(xp), y, params)
        fm = objective_xi(OffGridVariables.unpack(xm), y, params)
        fd[i] = (fp - fm) / (2 * h)
    g = gradient_xi(xi, y, params)
    overall = max(np.max(np.abs(fd)), 1e-300)
    out = {}
    for name, sl in (("nu", slice(0, n)), ("omega", slice(n, 2 * n)), ("phi", slice(2 * n, 3 * n))):
        denom = max(np.max(np.abs(fd[sl])), 1e-6 * overall)
        out[name] = float(np.max(np.abs(g[sl] - fd[sl])) / denom)
    return out
