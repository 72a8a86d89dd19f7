import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmra.core import (
    DimensionError,
    EmptyDictionaryError,
    RelaxationParams,
    SeparationError,
    SignalFormatError,
    add_noise,
    as_frequencies,
    atom,
    build_dictionary,
    fidelity,
    min_separation,
    objective_full,
    read_signal_csv,
    relax_atan,
    relax_log,
    relax_tanh,
    synthesize,
    torus_distance,
    write_signal_csv,
)

freqs = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


def test_atom_zero_frequency():
    np.testing.assert_allclose(atom(0.0, 4), np.ones(4))


def test_atom_half_frequency_alternates():
    np.testing.assert_allclose(atom(0.5, 4), [1, -1, 1, -1], atol=1e-15)


def test_atom_quarter_frequency():
    np.testing.assert_allclose(atom(0.25, 3), [1, -1j, -1], atol=1e-15)


def test_atom_rejects_empty_length():
    with pytest.raises(DimensionError):
        atom(0.1, 0)


@given(freqs, st.integers(1, 64))
def test_atom_unit_modulus_and_periodic(w, m):
    a = atom(w, m)
    np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-14)
    np.testing.assert_allclose(atom(w + 1.0, m), a, atol=1e-11)


@pytest.mark.parametrize("m", [1, 2, 7, 64])
def test_canonical_dictionary_is_orthogonal(m):
    a = build_dictionary(np.arange(m) / m, m)
    g = a.conj().T @ a
    np.testing.assert_allclose(g, m * np.eye(m), atol=1e-10 * m)


def test_dictionary_two_atoms():
    np.testing.assert_allclose(build_dictionary([0.0, 0.5], 2), [[1, 1], [1, -1]], atol=1e-15)


def test_dictionary_single_column_is_atom():
    np.testing.assert_allclose(build_dictionary([0.37], 9)[:, 0], atom(0.37, 9))


def test_dictionary_empty_raises():
    with pytest.raises(EmptyDictionaryError):
        build_dictionary([], 8)


def test_synthesize_constant():
    np.testing.assert_allclose(synthesize([0.0], [2.0], 5), 2 * np.ones(5))


def test_synthesize_zero_gains():
    assert not np.any(synthesize([0.1, 0.2], [0, 0], 6))


def test_synthesize_least_squares_round_trip():
    w, h = np.array([0.1, 0.3]), np.array([1, 1j])
    y = synthesize(w, h, 8)
    a = build_dictionary(w, 8)
    h_fit, *_ = np.linalg.lstsq(a, y, rcond=None)
    np.testing.assert_allclose(h_fit, h, atol=1e-12)
    assert np.linalg.norm(y - a @ h_fit) < 1e-12


def test_synthesize_length_mismatch():
    with pytest.raises(DimensionError):
        synthesize([0.1, 0.2], [1.0], 4)


def test_add_noise_zero_power_is_identity():
    y = synthesize([0.2], [1 + 1j], 16)
    np.testing.assert_array_equal(add_noise(y, 0.0, 3), y)


def test_add_noise_power_and_determinism():
    z = np.zeros(10_000, dtype=complex)
    n1, n2 = add_noise(z, 1.0, 11), add_noise(z, 1.0, 11)
    np.testing.assert_array_equal(n1, n2)
    assert abs(np.mean(np.abs(n1) ** 2) - 1.0) < 0.05
    # circular symmetry: real and imaginary halves carry equal power
    assert abs(np.var(n1.real) - np.var(n1.imag)) < 0.05


def test_add_noise_negative_power():
    with pytest.raises(ValueError):
        add_noise(np.zeros(3), -1.0, 0)


@pytest.mark.parametrize("fn", [relax_tanh, relax_log, relax_atan])
def test_relaxations_vanish_at_zero(fn):
    assert fn(0.0, 0.3) == 0.0


def test_relax_tanh_values():
    eps = 0.2
    assert relax_tanh(np.sqrt(eps), eps) == pytest.approx(0.7615941559557649, abs=1e-12)
    assert abs(relax_tanh(np.sqrt(50 * eps), eps) - 1.0) < 1e-12


def test_relax_epsilon_must_be_positive():
    with pytest.raises(ValueError):
        relax_tanh(1.0, 0.0)
    with pytest.raises(ValueError):
        RelaxationParams(epsilon=0.0)
    with pytest.raises(ValueError):
        RelaxationParams(epsilon=1.0, lam=-1.0)


@pytest.mark.parametrize("fn", [relax_tanh, relax_log, relax_atan])
@given(st.lists(st.floats(0, 100), min_size=2, max_size=20), st.floats(1e-3, 10))
def test_relaxations_monotone(fn, mags, eps):
    x = np.sort(np.asarray(mags))
    v = fn(x, eps)
    assert np.all(np.diff(v) >= -1e-15)
    assert np.all(v >= 0)


@given(st.floats(0, 1e3), st.floats(1e-4, 10))
def test_relax_tanh_bounded(x, eps):
    assert 0.0 <= relax_tanh(x, eps) <= 1.0


def test_objective_exact_fit_no_penalty():
    w, h = [0.1, 0.4], [1.0, -2j]
    y = synthesize(w, h, 12)
    assert objective_full(w, h, y, RelaxationParams(0.1, 0.0)) == pytest.approx(0.0, abs=1e-24)


def test_objective_zero_gains_is_signal_energy():
    y = synthesize([0.1, 0.4], [1.0, -2j], 12)
    val = objective_full([0.1, 0.4], [0, 0], y, RelaxationParams(0.1, 5.0))
    assert val == pytest.approx(np.linalg.norm(y) ** 2, rel=1e-12)


def test_objective_splits_into_terms():
    rng = np.random.default_rng(1)
    w = rng.uniform(size=4)
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    y = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    p = RelaxationParams(0.3, 2.5)
    m = np.arange(20)[:, None]
    r = y - np.exp(-2j * np.pi * m * w) @ h
    expect = np.sum(np.abs(r) ** 2) + 2.5 * np.sum(np.tanh(np.abs(h) ** 2 / 0.3))
    assert objective_full(w, h, y, p) == pytest.approx(expect, rel=1e-12)
    assert fidelity(w, h, y) == pytest.approx(np.sum(np.abs(r) ** 2), rel=1e-12)


def test_min_separation_examples():
    assert min_separation([0.1, 0.3]) == pytest.approx(0.2)
    assert min_separation([0.05, 0.95]) == pytest.approx(0.1)
    assert min_separation([0.1, 0.1 + 0.5 / 100]) * 100 == pytest.approx(0.5)


def test_min_separation_needs_two():
    with pytest.raises(SeparationError):
        min_separation([0.2])


@given(st.lists(st.floats(0, 1, exclude_max=True), min_size=2, max_size=8, unique=True),
       st.integers(-3, 3), st.randoms(use_true_random=False))
def test_min_separation_permutation_and_shift_invariant(ws, shift, rnd):
    base = min_separation(ws)
    perm = list(ws)
    rnd.shuffle(perm)
    assert min_separation(perm) == pytest.approx(base, abs=1e-12)
    assert min_separation(np.asarray(ws) + shift) == pytest.approx(base, abs=1e-9)


@given(freqs, freqs)
def test_torus_distance_symmetric_bounded(a, b):
    d = torus_distance(a, b)
    assert 0 <= d <= 0.5
    assert d == pytest.approx(torus_distance(b, a), abs=1e-12)


def test_as_frequencies_wraps_and_sorts():
    np.testing.assert_allclose(as_frequencies([1.25, -0.25, 0.5]), [0.25, 0.5, 0.75])
    assert as_frequencies([-1e-20])[0] == 0.0


def test_signal_csv_round_trip(tmp_path):
    y = add_noise(synthesize([0.123], [1 + 2j], 17), 0.5, 4)
    p = tmp_path / "s.csv"
    write_signal_csv(p, y)
    np.testing.assert_array_equal(read_signal_csv(p), y)


@pytest.mark.parametrize(
    "body, row",
    [("re,im\n1,2\n3\n", 2), ("re,im\n1,2\n1,2\n1,nan\n", 3), ("re,im\n1,2\nx,1\n", 2)],
)
def test_signal_csv_bad_rows(tmp_path, body, row):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(SignalFormatError) as info:
        read_signal_csv(p)
    assert info.value.row == row
    assert f"row {row}" in str(info.value)


@pytest.mark.parametrize("body", ["", "re,im\n", "a,b\n1,2\n"])
def test_signal_csv_empty_or_bad_header(tmp_path, body):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(SignalFormatError):
        read_signal_csv(p)
