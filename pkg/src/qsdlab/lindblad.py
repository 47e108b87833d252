"""Master-equation reference for the ensemble-averaged QSD density matrix.

    d rho/dt = -i[H, rho] + G rho G - 1/2 {G^2, rho}

integrated with the classic fixed-step RK4 method.
"""
from __future__ import annotations

import csv
import io

import numpy as np

from . import hilbert
from .errors import InvalidArgument, OracleInstabilityError
from .propagator import QsdModel, fmt, n_steps_for, record_steps

# Same fields and conventions as the trajectory model.
LindbladModel = QsdModel

POSITIVITY_TOL = 1e-8


def _check(model: QsdModel, rho: np.ndarray) -> None:
    if rho.shape != (model.dim, model.dim):
        raise InvalidArgument(f"density matrix {rho.shape} does not match model dimension {model.dim}")


def lindblad_rhs(model: QsdModel, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    _check(model, rho)
    H, G = model.H, model.G
    g2 = G @ G
    return -1j * (H @ rho - rho @ H) + G @ rho @ G - 0.5 * (g2 @ rho + rho @ g2)


def rk4_step(model: QsdModel, rho: np.ndarray, dt: float) -> np.ndarray:
    k1 = lindblad_rhs(model, rho)
    k2 = lindblad_rhs(model, rho + 0.5 * dt * k1)
    k3 = lindblad_rhs(model, rho + 0.5 * dt * k2)
    k4 = lindblad_rhs(model, rho + dt * k3)
    return rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


class RhoSeries:
    """Recorded density matrices on a time grid."""

    def __init__(self, times, rhos):
        self.times = np.asarray(times, dtype=float)
        self.rhos = np.asarray(rhos, dtype=complex)

    def __len__(self):
        return len(self.times)

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        n = self.rhos.shape[1]
        header = ["t"]
        for j in range(n):
            for k in range(n):
                header += [f"re_rho_{j}{k}", f"im_rho_{j}{k}"]
        w.writerow(header)
        for t, rho in zip(self.times, self.rhos):
            row = [fmt(t)]
            for z in rho.ravel():
                row += [fmt(z.real), fmt(z.imag)]
            w.writerow(row)
        return buf.getvalue() if fh is None else ""


def evolve_rho(model: QsdModel, rho0, dt: float, t_final: float, record_every: int = 1) -> RhoSeries:
    """RK4 evolution of ``rho0``; aborts if an eigenvalue drops below -1e-8."""
    rho = np.array(hilbert.check_density(rho0), dtype=complex)
    _check(model, rho)
    n = n_steps_for(t_final, dt)
    keep = set(record_steps(n, record_every))
    times, rhos = [0.0], [rho.copy()]
    for k in range(1, n + 1):
        rho = rk4_step(model, rho, dt)
        lowest = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
        if not lowest >= -POSITIVITY_TOL:
            raise OracleInstabilityError(
                f"density matrix eigenvalue {lowest:.3e} at t={k * dt:.6g}; reduce dt"
            )
        if k in keep:
            times.append(k * dt)
            rhos.append(rho.copy())
    return RhoSeries(times, rhos)


def trace_distance(a, b) -> float:
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape or a.ndim != 2:
        raise InvalidArgument(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return 0.5 * float(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T))).sum())
