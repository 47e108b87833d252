import numpy as np
import pytest
from hypothesis import given, settings

from conftest import SZ, models
from qsdlab.errors import InvalidArgument, OracleInstabilityError
from qsdlab.lindblad import evolve_rho, lindblad_rhs, trace_distance
from qsdlab.propagator import QsdModel

RHO_PLUS = 0.5 * np.ones((2, 2), complex)


def test_rhs_dephasing_rate(qubit):
    d = lindblad_rhs(qubit, RHO_PLUS)
    assert d[0, 1] == pytest.approx(-2 * RHO_PLUS[0, 1])
    assert d[0, 0] == 0 and d[1, 1] == 0


def test_rhs_reduces_to_commutator_without_measurement():
    h = np.array([[1.0, 0.5 - 0.2j], [0.5 + 0.2j, -0.3]])
    model = QsdModel(h, np.zeros((2, 2)))
    rho = np.array([[0.7, 0.1j], [-0.1j, 0.3]])
    np.testing.assert_allclose(lindblad_rhs(model, rho), -1j * (h @ rho - rho @ h), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(models())
def test_rhs_is_traceless_and_hermitian(pair):
    model, psi = pair
    d = lindblad_rhs(model, np.outer(psi, psi.conj()))
    assert abs(np.trace(d)) < 1e-12
    np.testing.assert_allclose(d, d.conj().T, atol=1e-12)


def test_dephasing_closed_form(qubit):
    series = evolve_rho(qubit, RHO_PLUS, 1e-3, 1.0)
    assert series.rhos[-1][0, 1].real == pytest.approx(0.5 * np.exp(-2.0), abs=1e-10)
    assert series.rhos[-1][0, 1].real == pytest.approx(0.06767, abs=1e-5)


def test_unitary_rotation_closed_form():
    omega = 2.0
    model = QsdModel(np.diag([omega, 0.0]), np.zeros((2, 2)))
    t = np.pi / omega
    series = evolve_rho(model, RHO_PLUS, t / 2000, t)
    assert abs(series.rhos[-1][0, 1] - 0.5 * np.exp(-1j * omega * t)) < 1e-8


def test_commuting_diagonal_state_is_stationary():
    model = QsdModel(np.diag([0.4, -0.2]), SZ)
    rho0 = np.diag([0.25, 0.75]).astype(complex)
    series = evolve_rho(model, rho0, 1e-2, 1.0, record_every=10)
    for rho in series.rhos:
        np.testing.assert_allclose(rho, rho0, atol=1e-15)


def test_trace_preserved_and_csv_header(qubit):
    series = evolve_rho(qubit, RHO_PLUS, 1e-2, 0.5, record_every=10)
    assert all(abs(np.trace(r) - 1) < 1e-12 for r in series.rhos)
    header = series.to_csv().splitlines()[0]
    assert header.startswith("t,re_rho_00,im_rho_00")
    assert len(series) == 6


def test_unstable_step_aborts():
    model = QsdModel.measurement(10 * SZ)
    with pytest.raises(OracleInstabilityError):
        evolve_rho(model, RHO_PLUS, 0.1, 2.0)


@pytest.mark.parametrize("a, b, expected", [
    (RHO_PLUS, RHO_PLUS, 0.0),
    (np.diag([1.0, 0.0]), np.diag([0.0, 1.0]), 1.0),
    (np.diag([0.75, 0.25]), np.diag([0.5, 0.5]), 0.25),
])
def test_trace_distance_examples(a, b, expected):
    assert trace_distance(a, b) == pytest.approx(expected, abs=1e-14)
    assert trace_distance(b, a) == pytest.approx(expected, abs=1e-14)


def test_trace_distance_dimension_mismatch():
    with pytest.raises(InvalidArgument):
        trace_distance(np.eye(2) / 2, np.eye(3) / 3)
