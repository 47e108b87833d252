import numpy as np
import pytest
from hypothesis import given

from conftest import PLUS, SX, SZ, states
from qsdlab import hilbert
from qsdlab.errors import ContractViolation, DegenerateStateError, InvalidArgument


@pytest.mark.parametrize("psi, a, expected", [
    ([1, 0], SZ, 1.0),
    (PLUS, SZ, 0.0),
    (PLUS, SX, 1.0),
])
def test_expectation_examples(psi, a, expected):
    assert hilbert.expectation(np.asarray(psi, complex), a) == pytest.approx(expected, abs=1e-14)


def test_expectation_requires_normalized_state():
    with pytest.raises(ContractViolation):
        hilbert.expectation(np.array([2.0, 0.0]), SZ)


def test_expectation_dimension_mismatch():
    with pytest.raises(InvalidArgument):
        hilbert.expectation(np.array([1.0, 0.0, 0.0]), SZ)


def test_shifted_operator_examples():
    np.testing.assert_allclose(hilbert.shifted_operator(SZ, np.array([1.0, 0.0])), np.diag([0.0, -2.0]))
    np.testing.assert_allclose(hilbert.shifted_operator(SZ, PLUS), SZ, atol=1e-15)


@pytest.mark.parametrize("psi, expected", [
    (PLUS, 1.0),
    ([1.0, 0.0], 0.0),
    ([np.sqrt(0.3), np.sqrt(0.7)], 0.84),
])
def test_variance_examples(psi, expected):
    assert hilbert.variance(np.asarray(psi, complex), SZ) == pytest.approx(expected, abs=1e-12)


def test_normalize_examples():
    np.testing.assert_allclose(hilbert.normalize([2, 0]), [1, 0])
    np.testing.assert_allclose(hilbert.normalize([1, 1j]), np.array([1, 1j]) / np.sqrt(2))
    with pytest.raises(DegenerateStateError):
        hilbert.normalize([0, 0])


def test_operator_symmetrizes_with_warning():
    a = np.array([[1.0, 1e-6], [0.0, -1.0]])
    with pytest.warns(RuntimeWarning):
        h = hilbert.operator(a)
    assert hilbert.hermiticity_defect(h) == 0.0
    assert not h.flags.writeable


def test_operator_rejects_non_square():
    with pytest.raises(InvalidArgument):
        hilbert.operator(np.zeros((2, 3)))


def test_eigenprojectors_merge_degenerate_levels():
    values, projectors = hilbert.eigenprojectors(np.diag([1.0, 0.0, 1.0]))
    assert list(values) == [0.0, 1.0]
    np.testing.assert_allclose(projectors[1], np.diag([1.0, 0.0, 1.0]))
    np.testing.assert_allclose(sum(projectors), np.eye(3))


def test_check_density_rejects_negative_eigenvalue():
    with pytest.raises(ContractViolation):
        hilbert.check_density(np.diag([1.2, -0.2]))


def test_haar_state_is_normalized():
    psi = hilbert.haar_state(np.random.default_rng(0), 5)
    assert np.linalg.norm(psi) == pytest.approx(1.0)


@given(states())
def test_shifted_operator_has_zero_mean(psi):
    g = np.diag(np.arange(psi.size, dtype=float))
    assert abs(hilbert.expectation(psi, hilbert.shifted_operator(g, psi))) < 1e-12


@given(states())
def test_variance_is_nonnegative_and_matches_definition(psi):
    g = np.diag(np.linspace(-1, 2, psi.size))
    mean = hilbert.expectation(psi, g)
    direct = hilbert.expectation(psi, g @ g) - mean ** 2
    v = hilbert.variance(psi, g)
    assert v >= 0.0
    assert v == pytest.approx(max(direct, 0.0), abs=1e-12)


@given(states())
def test_column_kernels_match_dense_products(psi):
    rng = np.random.default_rng(1)
    n = psi.size
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    cols = np.stack([psi, 2 * psi[::-1]], axis=1)
    np.testing.assert_allclose(hilbert.apply_cols(a, cols), a @ cols, atol=1e-12)
    np.testing.assert_allclose(hilbert.norm2_cols(cols), [1.0, 4.0], atol=1e-12)
    np.testing.assert_allclose(hilbert.inner_cols(cols, cols), [1.0, 4.0], atol=1e-12)
