import numpy as np
import pytest
from hypothesis import strategies as st

from qsdlab.propagator import QsdModel

SZ = np.diag([1.0, -1.0])
SX = np.array([[0.0, 1.0], [1.0, 0.0]])
PLUS = np.array([1.0, 1.0]) / np.sqrt(2)


@pytest.fixture
def qubit():
    return QsdModel.measurement(SZ)


def random_state(rng, n):
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def random_hermitian(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (a + a.conj().T)


@st.composite
def states(draw, n=None):
    """Normalized complex states drawn through a seed (keeps shrinking cheap)."""
    dim = draw(st.integers(2, 4)) if n is None else n
    seed = draw(st.integers(0, 2**32 - 1))
    return random_state(np.random.default_rng(seed), dim)


@st.composite
def models(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    dim = draw(st.integers(2, 4))
    rng = np.random.default_rng(seed)
    return QsdModel(random_hermitian(rng, dim), random_hermitian(rng, dim)), random_state(rng, dim)
