"""Finite-dimensional state vectors, Hermitian operators and density matrices.

States and operators are plain complex numpy arrays, marked read-only once
validated so they can be shared between trajectory workers.  hbar = 1.
"""
from __future__ import annotations

import warnings

import numpy as np

from .errors import ContractViolation, DegenerateStateError, InvalidArgument

NORM_TOL = 1e-10
HERMITIAN_WARN_TOL = 1e-10
DEGENERATE_NORM = 1e-14


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def state(amplitudes, normalized: bool = False) -> np.ndarray:
    """Build a state vector from a sequence of complex amplitudes.

    With ``normalized=True`` the squared norm must already be 1 to 1e-12.
    """
    psi = np.array(amplitudes, dtype=complex)
    if psi.ndim != 1 or psi.size < 1:
        raise InvalidArgument(f"state must be a non-empty 1-d sequence, got shape {psi.shape}")
    if not np.all(np.isfinite(psi)):
        raise InvalidArgument("state has non-finite amplitudes")
    if normalized and abs(np.vdot(psi, psi).real - 1.0) > 1e-12:
        raise ContractViolation("state flagged normalized but |psi|^2 != 1")
    return _frozen(psi)


def operator(matrix) -> np.ndarray:
    """Hermitian operator from a square matrix, symmetrized as (A + A^dag)/2."""
    a = np.array(matrix, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidArgument(f"operator must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgument("operator has non-finite entries")
    h = 0.5 * (a + a.conj().T)
    correction = float(np.max(np.abs(h - a)))
    if correction > HERMITIAN_WARN_TOL:
        warnings.warn(
            f"operator symmetrized; largest correction {correction:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return _frozen(h)


def hermiticity_defect(matrix) -> float:
    a = np.asarray(matrix, dtype=complex)
    return float(np.max(np.abs(a - a.conj().T)))


def zero_operator(n: int) -> np.ndarray:
    return _frozen(np.zeros((n, n), dtype=complex))


def _check_pair(psi: np.ndarray, a: np.ndarray) -> None:
    if psi.ndim != 1 or a.shape != (psi.size, psi.size):
        raise InvalidArgument(f"dimension mismatch: state {psi.shape} vs operator {a.shape}")


def _require_normalized(psi: np.ndarray) -> None:
    n2 = np.vdot(psi, psi).real
    if abs(n2 - 1.0) > NORM_TOL:
        raise ContractViolation(f"normalized state required, |psi|^2 = {n2!r}")


def expectation(psi, a) -> float:
    """<psi|A|psi> for a normalized state; the imaginary residue is dropped."""
    psi = np.asarray(psi, dtype=complex)
    a = np.asarray(a, dtype=complex)
    _check_pair(psi, a)
    _require_normalized(psi)
    return float(np.vdot(psi, a @ psi).real)


def shifted_operator(g, psi) -> np.ndarray:
    """G - <G> I, the operator whose expectation in ``psi`` vanishes."""
    g = np.asarray(g, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    mean = expectation(psi, g)
    return _frozen(g - mean * np.eye(g.shape[0]))


def variance(psi, g) -> float:
    """<G_delta^2>, clamped at zero."""
    psi = np.asarray(psi, dtype=complex)
    g = np.asarray(g, dtype=complex)
    _check_pair(psi, g)
    gd_psi = shifted_operator(g, psi) @ psi
    return max(float(np.vdot(gd_psi, gd_psi).real), 0.0)


def normalize(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    norm = float(np.linalg.norm(psi))
    if not norm > DEGENERATE_NORM:
        raise DegenerateStateError(f"cannot normalize state with norm {norm:.3e}")
    return _frozen(psi / norm)


def projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def check_density(rho, tol_herm: float = 1e-10, tol_trace: float = 1e-10, tol_pos: float = 1e-8) -> np.ndarray:
    """Validate a density matrix and return it as a read-only array."""
    rho = np.array(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidArgument(f"density matrix must be square, got {rho.shape}")
    if hermiticity_defect(rho) > tol_herm:
        raise ContractViolation("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol_trace or abs(np.trace(rho).imag) > tol_trace:
        raise ContractViolation(f"density matrix trace {np.trace(rho)!r} != 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol_pos:
        raise ContractViolation("density matrix has negative eigenvalues")
    return _frozen(rho)


def haar_state(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform state on the unit sphere of C^n via a normalized complex Gaussian."""
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return normalize(z)


def eigenprojectors(g, decimals: int = 9):
    """Distinct eigenvalues of ``g`` and the matching spectral projectors.

    Eigenvalues equal after rounding to ``decimals`` are merged.
    """
    evals, evecs = np.linalg.eigh(np.asarray(g, dtype=complex))
    keys = np.round(evals, decimals)
    values = []
    projectors = []
    for key in np.unique(keys):
        cols = evecs[:, keys == key]
        values.append(float(evals[keys == key].mean()))
        projectors.append(cols @ cols.conj().T)
    return np.array(values), np.array(projectors)


# Batched kernels on column layout: ``cols`` has shape (N, M), one trajectory
# per column.  Only scalar-times-vector operations are used, so each
# trajectory's arithmetic is identical whatever M is; the ensemble's
# bit-for-bit scheduling invariance relies on this.

def _scalar(z: complex):
    return z.real if z.imag == 0 else z


def apply_cols(a: np.ndarray, cols: np.ndarray) -> np.ndarray:
    out = np.zeros(cols.shape, dtype=complex)
    for j in range(a.shape[0]):
        acc = None
        for k in range(a.shape[1]):
            if a[j, k] != 0:
                term = _scalar(a[j, k]) * cols[k]
                acc = term if acc is None else acc + term
        if acc is not None:
            out[j] = acc
    return out


def inner_cols(phis: np.ndarray, psis: np.ndarray) -> np.ndarray:
    """Column-wise <phi|psi>."""
    acc = phis[0].conj() * psis[0]
    for k in range(1, psis.shape[0]):
        acc = acc + phis[k].conj() * psis[k]
    return acc


def norm2_cols(psis: np.ndarray) -> np.ndarray:
    acc = psis[0].real ** 2 + psis[0].imag ** 2
    for k in range(1, psis.shape[0]):
        acc = acc + (psis[k].real ** 2 + psis[k].imag ** 2)
    return acc
