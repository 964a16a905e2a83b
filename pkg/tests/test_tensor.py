import numpy as np
import pytest
from hypothesis import given, strategies as st

from combtomo.tensor import DimensionError, dagger, frobenius_norm, kron, lift, partial_trace

from conftest import crandn

seeds = st.integers(0, 2**32 - 1)


def test_kron_identities():
    assert np.array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))
    assert np.array_equal(kron(np.diag([1, 2]), np.eye(2)), np.diag([1, 1, 2, 2]))


@given(seeds)
def test_kron_mixed_product(seed):
    rng = np.random.default_rng(seed)
    a, b = crandn(rng, 2, 2), crandn(rng, 2, 2)
    x, y = crandn(rng, 2), crandn(rng, 2)
    # oracle: explicit index formula (a x) (x) (b y)
    expected = np.array([(a @ x)[i] * (b @ y)[j] for i in range(2) for j in range(2)])
    assert np.allclose(kron(a, b) @ np.kron(x, y), expected, atol=1e-12)


def test_kron_associative_on_integers():
    rng = np.random.default_rng(0)
    a, b, c = (rng.integers(-5, 5, (2, 3)) for _ in range(3))
    assert np.array_equal(kron(kron(a, b), c), kron(a, kron(b, c)))


def test_partial_trace_product_state(rng):
    a, b = crandn(rng, 2, 2), crandn(rng, 3, 3)
    assert np.allclose(partial_trace(np.kron(a, b), [2, 3], 1), np.trace(b) * a)
    assert np.allclose(partial_trace(np.kron(a, b), [2, 3], 0), np.trace(a) * b)


def test_partial_trace_bell_state():
    phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
    assert np.allclose(partial_trace(np.outer(phi, phi), [2, 2], 1), np.eye(2) / 2)


def test_partial_trace_middle_factor_by_summation(rng):
    m = crandn(rng, 12, 12)
    t = m.reshape(2, 3, 2, 2, 3, 2)
    expected = np.zeros((2, 2, 2, 2), dtype=complex)
    for k in range(3):
        expected += t[:, k, :, :, k, :]
    assert np.allclose(partial_trace(m, [2, 3, 2], 1), expected.reshape(4, 4))


@given(seeds, st.integers(0, 2))
def test_partial_trace_preserves_trace(seed, factor):
    rng = np.random.default_rng(seed)
    m = crandn(rng, 8, 8)
    m = m + m.conj().T
    out = partial_trace(m, [2, 2, 2], factor)
    assert abs(np.trace(out) - np.trace(m)) <= 1e-12 * max(1.0, abs(np.trace(m)))


def test_partial_trace_shape_errors():
    with pytest.raises(DimensionError):
        partial_trace(np.eye(4), [2, 3], 0)
    with pytest.raises(DimensionError):
        partial_trace(np.ones((2, 4)), [2, 2], 0)
    with pytest.raises(DimensionError):
        partial_trace(np.eye(4), [2, 2], 2)


def test_lift_trivial_cases():
    x = np.array([[0, 1], [1, 0]])
    assert np.array_equal(lift(x, [2], [2], 0), x)
    assert np.array_equal(lift(np.eye(2), [2, 3], [2, 3], 0), np.eye(6))


def test_lift_acts_on_one_factor(rng):
    u = crandn(rng, 2, 2)
    x, y = crandn(rng, 2), crandn(rng, 2)
    assert np.allclose(lift(u, [2, 2], [2, 2], 0) @ np.kron(x, y), np.kron(u @ x, y), atol=1e-12)
    assert np.allclose(lift(u, [2, 2], [2, 2], 1) @ np.kron(x, y), np.kron(x, u @ y), atol=1e-12)


def test_lift_rectangular(rng):
    w = crandn(rng, 6, 2)  # 2 -> 6 on factor 1, factor 0 and 2 untouched
    x, y, z = crandn(rng, 3), crandn(rng, 2), crandn(rng, 2)
    out = lift(w, [3, 2, 2], [3, 6, 2], 1) @ np.kron(np.kron(x, y), z)
    assert np.allclose(out, np.kron(np.kron(x, w @ y), z))


@given(seeds)
def test_lift_commutes_with_composition(seed):
    rng = np.random.default_rng(seed)
    a, b = crandn(rng, 3, 3), crandn(rng, 3, 3)
    lhs = lift(a @ b, [2, 3], [2, 3], 1)
    rhs = lift(a, [2, 3], [2, 3], 1) @ lift(b, [2, 3], [2, 3], 1)
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1.0, np.max(np.abs(lhs)))


def test_lift_errors():
    with pytest.raises(DimensionError):
        lift(np.eye(2), [2, 2], [2, 3], 0)
    with pytest.raises(DimensionError):
        lift(np.eye(3), [2, 2], [2, 2], 0)


def test_dagger():
    assert np.array_equal(dagger(np.eye(2)), np.eye(2))
    assert np.array_equal(dagger([[0, 1], [0, 0]]), [[0, 0], [1, 0]])


@given(seeds)
def test_dagger_involution_and_product_rule(seed):
    rng = np.random.default_rng(seed)
    a, b = crandn(rng, 3, 4), crandn(rng, 4, 2)
    assert np.array_equal(dagger(dagger(a)), a)
    assert np.max(np.abs(dagger(a @ b) - dagger(b) @ dagger(a))) < 1e-12


def test_frobenius_norm(rng):
    assert frobenius_norm(np.zeros((3, 3))) == 0
    assert np.isclose(frobenius_norm(np.eye(5)), np.sqrt(5), rtol=1e-15)
    m = crandn(rng, 4, 3)
    assert abs(frobenius_norm(m) ** 2 - np.trace(m.conj().T @ m).real) < 1e-12 * frobenius_norm(m) ** 2
