import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import PLUS, SZ, states
from qsdlab.errors import InvalidArgument
from qsdlab.oscillator import (
    OscillatorState,
    cloud_log_volume,
    from_oscillator,
    hamilton_divergence,
    hamilton_flow_check,
    oscillator_energy,
    sphere_divergence,
    symplectic_defect,
    to_oscillator,
    volume_diagnostic,
)
from qsdlab.propagator import QsdModel


def test_to_oscillator_examples():
    s = to_oscillator([(1 + 1j) / np.sqrt(2)], [1.0])
    np.testing.assert_allclose([s.q[0], s.p[0]], [1.0, 1.0])
    s = to_oscillator([1.0, 0.0], [1.0, 2.0])
    np.testing.assert_allclose(s.q, [np.sqrt(2), 0.0])
    np.testing.assert_allclose(s.p, [0.0, 0.0])


def test_to_oscillator_shape_mismatch():
    with pytest.raises(InvalidArgument):
        to_oscillator([1.0, 0.0], [1.0])


@given(states(), st.lists(st.floats(0.1, 5.0), min_size=4, max_size=4))
def test_round_trip(psi, omega):
    omega = np.array(omega[: psi.size])
    np.testing.assert_allclose(from_oscillator(to_oscillator(psi, omega)), psi, atol=1e-14)


@given(states(), st.floats(0.1, 10.0))
def test_equal_frequencies_give_energy_omega(psi, w):
    assert oscillator_energy(to_oscillator(psi, np.full(psi.size, w))) == pytest.approx(w, rel=1e-12)


def test_energy_example():
    assert oscillator_energy(to_oscillator(PLUS, [1.0, 2.0])) == pytest.approx(1.5)


@pytest.mark.parametrize("omega, psi0", [
    ([1.0], [1.0 + 0j]),
    ([1.0, 2.0], PLUS),
])
def test_flow_returns_after_full_period(omega, psi0):
    report = hamilton_flow_check(omega, psi0, 2 * np.pi, 2 * np.pi / 20000)
    assert report.passed
    assert report.energy_drift < 1e-6


def test_zero_state_stays_zero():
    report = hamilton_flow_check([1.0, 2.0], [0.0, 0.0], 1.0, 1e-3)
    assert report.hamilton_error == 0.0 and report.energy_drift == 0.0


def test_oscillator_flow_is_symplectic_and_divergence_free():
    x0 = np.array([0.3, -1.1, 0.7, 0.2])
    assert symplectic_defect([1.0, 2.0], x0, 1.0, 1e-2) < 1e-8
    assert abs(hamilton_divergence([1.0, 2.0], x0)) < 1e-9


def test_sphere_divergence_sign_depends_on_mean():
    model = QsdModel.measurement(SZ)
    # 2 - 6 <G>^2 for the projected qubit drift
    assert sphere_divergence(model, PLUS) == pytest.approx(2.0, abs=1e-5)
    psi = np.sqrt([0.9, 0.1])
    assert sphere_divergence(model, psi) == pytest.approx(2 - 6 * 0.8 ** 2, abs=1e-5)


def test_unitary_cloud_volume_constant():
    model = QsdModel(np.diag([1.0, 2.5]), np.zeros((2, 2)))
    series = volume_diagnostic(model, PLUS, cloud_size=12, t_final=10.0, dt=1e-3, record_every=1000)
    assert np.ptp(series.log_volume) < 1e-3
    assert not series.localized


def test_measurement_cloud_contracts():
    model = QsdModel.measurement(SZ)
    series = volume_diagnostic(model, PLUS, cloud_size=12, t_final=10.0, dt=1e-3, record_every=1000)
    assert series.log_volume[0] - series.log_volume[-1] > 5
    assert series.to_csv().splitlines()[0] == "t,log_volume,rank"


def test_identical_cloud_is_degenerate():
    model = QsdModel.measurement(SZ)
    series = volume_diagnostic(model, PLUS, cloud_size=6, t_final=0.1, dt=1e-2,
                               record_every=5, members=np.tile(PLUS, (6, 1)))
    assert np.all(np.isneginf(series.log_volume))
    assert series.localized


def test_cloud_volume_ignores_phase_and_norm():
    rng = np.random.default_rng(2)
    members = PLUS + 1e-2 * (rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2)))
    v, rank = cloud_log_volume(PLUS, members)
    rotated = 3.0 * np.exp(0.7j) * members
    v2, rank2 = cloud_log_volume(PLUS, rotated)
    assert rank == rank2 == 2
    assert v == pytest.approx(v2, abs=1e-9)


def test_cloud_size_lower_bound():
    with pytest.raises(InvalidArgument):
        volume_diagnostic(QsdModel.measurement(SZ), PLUS, cloud_size=3)


@settings(max_examples=20, deadline=None)
@given(states())
def test_oscillator_state_is_energy_weighted_norm(psi):
    omega = np.arange(1, psi.size + 1, dtype=float)
    s = to_oscillator(psi, omega)
    assert isinstance(s, OscillatorState)
    assert oscillator_energy(s) == pytest.approx(float(np.sum(omega * np.abs(psi) ** 2)), rel=1e-12)


def test_rk4_matrix_matches_stage_by_stage_rk4():
    from qsdlab.oscillator import hamilton_rhs, rk4, rk4_matrix

    omega = np.array([1.0, 2.0])
    x0 = np.array([0.3, -1.1, 0.7, 0.2])
    *_, generic = rk4(lambda y: hamilton_rhs(omega, y), x0, 0.05, 10)
    a = np.block([[np.zeros((2, 2)), np.diag(omega)], [-np.diag(omega), np.zeros((2, 2))]])
    np.testing.assert_allclose(np.linalg.matrix_power(rk4_matrix(a, 0.05), 10) @ x0, generic, atol=1e-14)
