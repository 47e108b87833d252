import numpy as np
import pytest

from qsdlab.noise import NoiseStream, moment_report, state_rng


def test_increment_moments_single_stream():
    dt, m = 0.01, 10**6
    dxi = NoiseStream(seed=7, stream_id=0, dt=dt).next_block(m)
    assert abs(dxi.real.mean()) < 4 * np.sqrt(dt / 2 / m)
    assert abs(dxi.imag.mean()) < 4 * np.sqrt(dt / 2 / m)
    assert abs((dxi ** 2).mean()) < 4 * dt / np.sqrt(m)
    assert abs((np.abs(dxi) ** 2).mean() - dt) < 4 * dt * np.sqrt(2 / m)


def test_moment_report_reference_call():
    report = moment_report(seed=1, stream_count=100, draws_per_stream=10**4, dt=0.01)
    checks = report.checks()
    assert checks["mean_zero"] and checks["square_zero"] and checks["abs_square_dt"]
    assert checks["cross_stream_independent"]
    assert report == moment_report(seed=1, stream_count=100, draws_per_stream=10**4, dt=0.01)


def test_stream_reproducible_and_block_consistent():
    a = NoiseStream(3, 5, 1e-3)
    b = NoiseStream(3, 5, 1e-3)
    singles = [a.next_increment() for _ in range(10)]
    np.testing.assert_array_equal(singles, b.next_block(10))


def test_streams_differ_by_id_and_purpose():
    a = NoiseStream(3, 0, 1e-3).next_block(4)
    b = NoiseStream(3, 1, 1e-3).next_block(4)
    assert not np.array_equal(a, b)
    assert state_rng(3, 0).random() == state_rng(3, 0).random()
    assert state_rng(3, 0).random() != state_rng(3, 1).random()


def test_invalid_dt_rejected():
    with pytest.raises(ValueError):
        NoiseStream(0, 0, 0.0)
