import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmra.config import DmraConfig
from dmra.core import RelaxationParams, objective_full, synthesize, torus_distance
from dmra.offgrid import (
    OffGridVariables,
    cfar_threshold,
    combine_gains,
    false_alarm_probability,
    gradient_xi,
    merge_close,
    objective_xi,
    off_grid_estimate,
    quasi_newton_minimize,
    residual_peak,
    selector_c,
    split_gains,
    threshold_c,
)

from .helpers import central_difference_error


def test_split_gains_examples():
    nu, phi = split_gains([0.0, -3.0, 1 - 1j])
    np.testing.assert_allclose(nu, [0.0, 3.0, np.sqrt(2)])
    np.testing.assert_allclose(phi, [0.0, np.pi, np.pi / 4])


@given(st.lists(st.complex_numbers(max_magnitude=1e4, allow_nan=False, allow_infinity=False), min_size=1, max_size=10))
def test_split_combine_round_trip(values):
    h = np.asarray(values, dtype=complex)
    nu, phi = split_gains(h)
    assert np.all(nu >= 0)
    assert np.all((phi >= 0) & (phi < 2 * np.pi))
    np.testing.assert_allclose(combine_gains(nu, phi), h, atol=1e-14 * max(1.0, np.max(np.abs(h))))


def test_pack_unpack():
    xi = OffGridVariables.from_gains([0.1, 0.4], [1j, 2.0])
    back = OffGridVariables.unpack(xi.pack())
    np.testing.assert_array_equal(back.pack(), xi.pack())
    with pytest.raises(ValueError):
        OffGridVariables.unpack(np.ones(4))
    with pytest.raises(ValueError):
        OffGridVariables(np.ones(2), np.ones(3), np.ones(2))


def _random_xi(rng, n, m):
    w = rng.uniform(size=n)
    h = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    y = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return OffGridVariables.from_gains(w, h), y


def test_objective_xi_cases():
    rng = np.random.default_rng(0)
    xi, y = _random_xi(rng, 4, 24)
    p = RelaxationParams(0.3, 1.7)
    assert objective_xi(xi, y, p) == pytest.approx(objective_full(xi.omegas, xi.gains, y, p), rel=1e-12)
    zero = OffGridVariables(np.zeros(4), xi.omegas, xi.phi)
    assert objective_xi(zero, y, p) == pytest.approx(np.linalg.norm(y) ** 2, rel=1e-12)
    exact = synthesize(xi.omegas, xi.gains, 24)
    assert objective_xi(xi, exact, RelaxationParams(0.3, 0.0)) == pytest.approx(0.0, abs=1e-20)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8), st.integers(8, 64))
def test_gradient_matches_finite_differences(seed, n, m):
    rng = np.random.default_rng(seed)
    xi, y = _random_xi(rng, n, m)
    p = RelaxationParams(float(rng.uniform(0.1, 5)), float(rng.uniform(0, 5)))
    assert max(central_difference_error(xi, y, p).values()) < 1e-5


def test_gradient_vanishes_at_noiseless_optimum():
    xi = OffGridVariables.from_gains([0.12, 0.47], [1.5, -0.5j])
    y = synthesize(xi.omegas, xi.gains, 32)
    assert np.linalg.norm(gradient_xi(xi, y, RelaxationParams(1.0, 0.0))) < 1e-8


@pytest.mark.parametrize("delta", [1e-4, -1e-4])
def test_frequency_gradient_points_back_to_truth(delta):
    y = synthesize([0.3], [2.0], 32)
    xi = OffGridVariables.from_gains([0.3 + delta], [2.0])
    g_w = gradient_xi(xi, y, RelaxationParams(1.0, 0.0))[1]
    # descent direction -g_w moves the frequency back towards 0.3
    assert np.sign(-g_w) == -np.sign(delta)


def test_qn_stays_at_optimum():
    xi = OffGridVariables.from_gains([0.12, 0.47], [1.5, -0.5j])
    y = synthesize(xi.omegas, xi.gains, 32)
    out, info = quasi_newton_minimize(xi, y, RelaxationParams(1.0, 0.0))
    np.testing.assert_allclose(out.omegas, xi.omegas, atol=1e-12)
    np.testing.assert_allclose(out.gains, xi.gains, atol=1e-10)


def test_qn_single_atom_recovery():
    m = 64
    y = synthesize([0.3], [1 + 1j], m)
    xi0 = OffGridVariables.from_gains([0.3 + 0.3 / m], [1.0])
    out, _ = quasi_newton_minimize(xi0, y, RelaxationParams(1.0, 0.0))
    assert torus_distance(out.omegas[0], 0.3) < 1e-8


def test_qn_two_close_atoms():
    m = 100
    truth = np.array([0.4, 0.4 + 0.8 / m])
    h = np.array([3.0, 2.0 - 1j])
    y = synthesize(truth, h, m)
    xi0 = OffGridVariables.from_gains(truth + np.array([0.05, -0.05]) / m, h * 0.9)
    out, _ = quasi_newton_minimize(xi0, y, RelaxationParams(1.0, 0.0), tolerance=1e-12)
    np.testing.assert_allclose(np.sort(out.omegas), truth, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_qn_never_increases_objective(seed):
    rng = np.random.default_rng(seed)
    xi, y = _random_xi(rng, int(rng.integers(1, 6)), 32)
    p = RelaxationParams(float(rng.uniform(0.1, 2)), float(rng.uniform(0, 3)))
    out, info = quasi_newton_minimize(xi, y, p, max_iter=50)
    assert objective_xi(out, y, p) <= objective_xi(xi, y, p) + 1e-9
    assert np.all(out.nu >= 0) and np.all((out.omegas >= 0) & (out.omegas < 1))


def test_merge_worked_example():
    w, e, rec = merge_close([0.100, 0.101], [3.0, 1.0], 0.002)
    assert w[0] == pytest.approx(0.10025, abs=1e-15)
    assert e[0] == pytest.approx(2.5, abs=1e-15)
    assert rec[0].tau == pytest.approx(0.75, abs=1e-15)


def test_merge_no_op_and_chain():
    w, e, rec = merge_close([0.1, 0.2, 0.3], [1.0, 1.0, 1.0], 0.05)
    np.testing.assert_allclose(w, [0.1, 0.2, 0.3])
    assert rec == []
    w, e, rec = merge_close([0.100, 0.101, 0.102], [1.0, 1.0, 1.0], 0.005)
    assert w.size == 1 and len(rec) == 2


def test_merge_across_wrap():
    w, e, _ = merge_close([0.999, 0.0005], [1.0, 1.0], 0.002)
    assert w.size == 1
    assert torus_distance(w[0], 0.99975) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1, exclude_max=True), min_size=1, max_size=25),
       st.floats(1e-4, 0.1), st.integers(0, 2**31))
def test_merge_output_separated(ws, beta, seed):
    rng = np.random.default_rng(seed)
    e_in = rng.uniform(0.01, 5, len(ws))
    w, e, rec = merge_close(np.sort(ws), e_in, beta)
    if w.size > 1:
        gaps = np.diff(np.concatenate([w, [w[0] + 1.0]]))
        assert np.min(gaps) >= beta * (1 - 1e-12)
    assert w.size + len(rec) == len(ws)
    for r in rec:
        assert r.merged_energy <= max(e_in.max(), r.merged_energy) + 1e-12


def test_threshold_c_examples():
    h = np.full(5, np.sqrt(2.0))
    assert threshold_c(h, 0.8) == pytest.approx(1.6)
    assert threshold_c(np.array([3.0]), 0.5) < 9.0
    with pytest.raises(ValueError):
        threshold_c(np.array([]), 0.8)


def test_selector_c_examples():
    w, e, _ = selector_c([0.1, 0.4, 0.7], np.ones(3), 0.01, 0.8)
    np.testing.assert_allclose(w, [0.1, 0.4, 0.7])
    w, e, _ = selector_c([0.100, 0.101], np.sqrt([3.0, 1.0]), 0.002, 0.1)
    np.testing.assert_allclose(w, [0.10025], atol=1e-15)
    w, e, _ = selector_c([0.1, 0.4, 0.7], np.ones(3), 0.01, 1.0)
    assert w.size == 0


def test_cfar_threshold_value():
    assert cfar_threshold(1.0, 100, 0.01) == pytest.approx(0.0920532, abs=1e-6)
    t = [cfar_threshold(1.0, 100, p) for p in (0.001, 0.01, 0.1)]
    assert t[0] > t[1] > t[2]
    assert cfar_threshold(0.0, 100, 0.01) == 0.0
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            cfar_threshold(1.0, 100, bad)


def test_false_alarm_probability_inverts_threshold():
    for p in (0.001, 0.01, 0.1):
        assert false_alarm_probability(cfar_threshold(2.0, 64, p), 2.0, 64) == pytest.approx(p, rel=1e-3)


def test_residual_peak_cases():
    xi = OffGridVariables.from_gains([0.12, 0.47], [1.5, -0.5j])
    y = synthesize(xi.omegas, xi.gains, 32)
    assert residual_peak(y, xi) < 1e-28
    empty = OffGridVariables(np.zeros(0), np.zeros(0), np.zeros(0))
    assert residual_peak(y, empty) == pytest.approx(np.max(np.abs(np.fft.ifft(y)) ** 2))


def test_residual_peak_noise_calibration():
    rng = np.random.default_rng(3)
    t_v = cfar_threshold(1.0, 100, 0.01)
    empty = OffGridVariables(np.zeros(0), np.zeros(0), np.zeros(0))
    hits = 0
    for _ in range(2000):
        y = np.sqrt(0.5) * (rng.standard_normal(100) + 1j * rng.standard_normal(100))
        hits += residual_peak(y, empty) > t_v
    assert 0.002 <= hits / 2000 <= 0.03


def _stage2(y, w1, g1, **kw):
    m = y.size
    t_v = 1e-18 * float(np.vdot(y, y).real) / m
    return off_grid_estimate(y, w1, g1, DmraConfig(sigma_sq=0.0, **kw), lam=1e-6, epsilon=1.0,
                             t_v=t_v, beta0=0.5 / m)


def test_stage2_exact_start_accepted_unchanged():
    truth, h = np.array([0.1, 0.2, 0.5]), np.array([2, 1.5j, -1 + 1j])
    y = synthesize(truth, h, 64)
    res = _stage2(y, truth, h)
    assert res.accepted and res.trace["accepted"][0]
    np.testing.assert_allclose(res.omegas, truth, atol=1e-12)
    assert res.trace["gamma_c"][0] == pytest.approx(0.8 * 1.1)


def test_stage2_removes_spurious_atoms():
    truth, h = np.array([0.1, 0.2, 0.5]), np.array([2, 1.5j, -1 + 1j])
    y = synthesize(truth, h, 64)
    spur = np.array([0.33, 0.7, 0.82, 0.9])
    w1 = np.concatenate([truth + 0.002, spur])
    g1 = np.concatenate([h, 0.3 * np.ones(4)])
    order = np.argsort(w1)
    res = _stage2(y, w1[order], g1[order])
    assert res.accepted
    np.testing.assert_allclose(res.omegas, truth, atol=1e-10)


def test_stage2_threshold_adaptation_bounded():
    rng = np.random.default_rng(8)
    truth = np.array([0.1, 0.107, 0.6])
    y = synthesize(truth, [2, 2, 2], 100) + 0.1 * (rng.standard_normal(100) + 1j * rng.standard_normal(100))
    res = off_grid_estimate(y, truth + 0.001, np.full(3, 2.0), DmraConfig(sigma_sq=0.01), lam=0.01,
                            epsilon=1.0, t_v=cfar_threshold(0.01, 100, 0.01), beta0=0.005)
    g0 = 0.8
    for k, g in enumerate(res.trace["gamma_c"], start=1):
        assert 0.8**k * g0 * (1 - 1e-12) <= g <= 1.1**k * g0 * (1 + 1e-12)
    for b in res.trace["beta"]:
        assert b <= 0.005 * (1 + 1e-12)
