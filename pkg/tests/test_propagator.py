import numpy as np
import pytest
from hypothesis import given, settings

from conftest import PLUS, models
from qsdlab.errors import DegenerateStateError, InvalidArgument
from qsdlab.noise import NoiseStream
from qsdlab.propagator import (
    QsdModel,
    StepScheme,
    diffusion,
    drift,
    evolve_trajectory,
    n_steps_for,
    record_steps,
    step,
    step_batch,
)

EM = StepScheme("euler-maruyama", 0.01)


def test_drift_examples(qubit):
    np.testing.assert_allclose(drift(qubit, [1, 0]), [0, 0])
    np.testing.assert_allclose(drift(qubit, PLUS), -0.5 * PLUS, atol=1e-15)
    psi = np.array([0.6, 0.8j])
    unitary = QsdModel(np.diag([1.5, -0.5]), np.zeros((2, 2)))
    np.testing.assert_allclose(drift(unitary, psi), -1j * np.array([1.5, -0.5]) * psi)


def test_diffusion_examples(qubit):
    np.testing.assert_allclose(diffusion(qubit, [1, 0]), [0, 0])
    np.testing.assert_allclose(diffusion(qubit, PLUS), [1 / np.sqrt(2), -1 / np.sqrt(2)], atol=1e-15)
    psi = np.sqrt([0.3, 0.7])
    np.testing.assert_allclose(diffusion(qubit, psi), [1.4 * np.sqrt(0.3), -0.6 * np.sqrt(0.7)], atol=1e-14)


def test_single_euler_maruyama_step_arithmetic(qubit):
    # psi - psi*dt/2 + G psi * dxi, component by component
    out = step(qubit, PLUS, EM, 0.05 + 0j)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(out, [s * (1 - 0.005 + 0.05), s * (1 - 0.005 - 0.05)], atol=1e-15)
    assert out[1].real == pytest.approx(0.6682, abs=1e-4)


def test_eigenstate_is_fixed_point(qubit):
    e0 = np.array([1.0, 0.0], complex)
    for dxi in (0.3 + 0.1j, -2.0, 0j):
        np.testing.assert_array_equal(step(qubit, e0, StepScheme(dt=0.01), dxi), e0)


def test_unitary_limit_first_order():
    omega, t_final = 2.0, 1.0
    model = QsdModel(np.diag([omega, 0.0]), np.zeros((2, 2)))
    errors = []
    for dt in (1e-3, 5e-4):
        rec = evolve_trajectory(model, PLUS, StepScheme(dt=dt), NoiseStream(0, 0, dt), t_final, 100)
        errors.append(abs(rec.states[-1][0] - PLUS[0] * np.exp(-1j * omega * t_final)))
    assert errors[0] < 1e-3
    # renormalized Euler on a pure rotation: phase error shrinks with dt
    assert errors[1] < errors[0]


def test_unitary_norm_preserved():
    model = QsdModel(np.diag([1.0, 3.0]), np.zeros((2, 2)))
    rec = evolve_trajectory(model, PLUS, StepScheme(dt=1e-3), NoiseStream(0, 0, 1e-3), 1.0)
    assert np.max(np.abs(np.linalg.norm(rec.states, axis=1) - 1)) < 1e-6


def test_trajectory_localizes(qubit):
    rec = evolve_trajectory(qubit, PLUS, StepScheme(dt=1e-3), NoiseStream(11, 0, 1e-3), 10.0, 1000)
    assert rec.variance_G[0] == pytest.approx(1.0)
    assert rec.variance_G[-1] < 1e-3


def test_trajectory_is_reproducible(qubit):
    args = (qubit, PLUS, StepScheme(dt=1e-3))
    a = evolve_trajectory(*args, NoiseStream(4, 2, 1e-3), 0.5, 10)
    b = evolve_trajectory(*args, NoiseStream(4, 2, 1e-3), 0.5, 10)
    assert a == b
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == "t,re_0,im_0,re_1,im_1,expectation_G,variance_G,norm"


def test_batch_rows_independent_of_batch_size(qubit):
    rng = np.random.default_rng(3)
    psis = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
    psis /= np.linalg.norm(psis, axis=1)[:, None]
    dxis = 0.1 * (rng.standard_normal(5) + 1j * rng.standard_normal(5))
    full, _, _ = step_batch(qubit, psis, StepScheme(dt=0.01), dxis)
    for i in range(5):
        one, _, _ = step_batch(qubit, psis[i:i + 1], StepScheme(dt=0.01), dxis[i:i + 1])
        np.testing.assert_array_equal(one[0], full[i])


def test_non_finite_update_is_degenerate(qubit):
    with pytest.raises(DegenerateStateError):
        step(qubit, PLUS, StepScheme(dt=0.01), complex("nan"))


def test_scheme_validation_and_stability_warning(qubit):
    with pytest.raises(InvalidArgument):
        StepScheme("milstein", 0.01)
    with pytest.raises(InvalidArgument):
        StepScheme(dt=0.0)
    with pytest.warns(RuntimeWarning):
        StepScheme(dt=0.6).check_stability(qubit)


def test_step_grid_helpers():
    assert record_steps(10, 3) == [0, 3, 6, 9, 10]
    assert n_steps_for(1.0, 1e-3) == 1000
    with pytest.raises(InvalidArgument):
        n_steps_for(1.0, 0.3)


@settings(max_examples=40, deadline=None)
@given(models())
def test_diffusion_orthogonal_to_state(pair):
    model, psi = pair
    assert abs(np.vdot(psi, diffusion(model, psi))) < 1e-12


@settings(max_examples=40, deadline=None)
@given(models())
def test_ito_norm_balance_of_coefficients(pair):
    # d|psi|^2 has zero drift: 2 Re<psi, a> + |b|^2 = 0
    model, psi = pair
    a, b = drift(model, psi), diffusion(model, psi)
    assert abs(2 * np.vdot(psi, a).real + np.vdot(b, b).real) < 1e-12


@settings(max_examples=25, deadline=None)
@given(models())
def test_renormalized_step_returns_unit_norm(pair):
    model, psi = pair
    out = step(model, psi, StepScheme(dt=1e-3), 0.02 - 0.01j)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)
