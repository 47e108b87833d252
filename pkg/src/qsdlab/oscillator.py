"""Amplitudes as oscillator coordinates, and phase-space volume diagnostics.

psi_j = (q_j + i p_j) / sqrt(2) turns free Schrodinger evolution with
energies omega_j into N decoupled harmonic oscillators.  The volume tools
measure how a small cloud of states spreads or contracts under unitary and
measurement dynamics.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import hilbert
from .errors import InvalidArgument
from .noise import NoiseStream, state_rng
from .propagator import QsdModel, StepScheme, _step_cols, fmt, n_steps_for, record_steps

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class OscillatorState:
    q: np.ndarray
    p: np.ndarray
    omega: np.ndarray


def to_oscillator(psi, omega) -> OscillatorState:
    psi = np.asarray(psi, dtype=complex)
    omega = np.asarray(omega, dtype=float)
    if psi.shape != omega.shape or psi.ndim != 1:
        raise InvalidArgument(f"state {psi.shape} and frequencies {omega.shape} differ")
    return OscillatorState(SQRT2 * psi.real, SQRT2 * psi.imag, omega)


def from_oscillator(state: OscillatorState) -> np.ndarray:
    return (state.q + 1j * state.p) / SQRT2


def oscillator_energy(state: OscillatorState) -> float:
    return float(np.sum(0.5 * state.omega * (state.q ** 2 + state.p ** 2)))


def hamilton_rhs(omega, x: np.ndarray) -> np.ndarray:
    """Vector field (dq/dt, dp/dt) = (omega p, -omega q) on x = [q, p]."""
    n = len(omega)
    q, p = x[:n], x[n:]
    return np.concatenate([omega * p, -omega * q])


def schrodinger_rhs(omega, psi: np.ndarray) -> np.ndarray:
    return -1j * omega * psi


def rk4(f, y, dt: float, n: int):
    """``n`` classic RK4 steps of the autonomous field ``f``; yields each state."""
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        yield y


@dataclass
class FlowReport:
    t_final: float
    dt: float
    hamilton_error: float       # max |q + ip - sqrt2 psi_exact| over the run
    schrodinger_error: float    # max |psi - psi_exact|
    cross_error: float          # max |psi_from(q, p) - psi|
    energy_drift: float
    tolerance: float = 1e-6

    @property
    def passed(self) -> bool:
        return max(self.hamilton_error, self.schrodinger_error, self.cross_error) < self.tolerance

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["pass"] = self.passed
        return d


def rk4_matrix(a: np.ndarray, dt: float) -> np.ndarray:
    """One RK4 step of the linear field y' = a y, as a matrix (exact, not an approximation of RK4)."""
    z = dt * np.asarray(a)
    eye = np.eye(z.shape[0], dtype=z.dtype)
    return eye + z @ (eye + z @ (eye / 2 + z @ (eye / 6 + z / 24)))


def _iterate(step: np.ndarray, y0: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n, y0.size), dtype=np.result_type(step, y0))
    y = y0
    for k in range(n):
        y = step @ y
        out[k] = y
    return out


def hamilton_flow_check(omega, psi0, t_final: float, dt: float, tolerance: float = 1e-6) -> FlowReport:
    """Integrate Hamilton's equations and the Schrodinger equation separately.

    Both runs use RK4 and are compared against psi_j(0) exp(-i omega_j t).
    Both fields are linear, so each RK4 step is applied as a fixed matrix.
    """
    omega = np.asarray(omega, dtype=float)
    psi0 = np.asarray(psi0, dtype=complex)
    n = n_steps_for(t_final, dt)
    m = len(omega)
    osc = to_oscillator(psi0, omega)
    e0 = oscillator_energy(osc)
    w = np.diag(omega)
    field = np.block([[np.zeros((m, m)), w], [-w, np.zeros((m, m))]])
    xs = _iterate(rk4_matrix(field, dt), np.concatenate([osc.q, osc.p]), n)
    psis = _iterate(rk4_matrix(-1j * w, dt), psi0, n)
    times = dt * np.arange(1, n + 1)
    exact = psi0 * np.exp(-1j * np.outer(times, omega))
    q, p = xs[:, :m], xs[:, m:]
    from_h = (q + 1j * p) / SQRT2
    energy = np.sum(0.5 * omega * (q ** 2 + p ** 2), axis=1)

    def worst(d):
        return float(np.max(np.abs(d), initial=0.0))

    return FlowReport(t_final, dt, worst(from_h - exact), worst(psis - exact),
                      worst(from_h - psis), worst(energy - e0), tolerance)


def flow_map(omega, t: float, dt: float):
    """The RK4 time-t map of the oscillator field as a function of x = [q, p]."""
    n = n_steps_for(t, dt)

    def phi(x):
        y = np.asarray(x, dtype=float)
        for y in rk4(lambda z: hamilton_rhs(omega, z), y, dt, n):
            pass
        return y

    return phi


def jacobian_fd(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=1)


def symplectic_form(n: int) -> np.ndarray:
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


def symplectic_defect(omega, x0, t: float, dt: float) -> float:
    """max |J^T Omega J - Omega| for the finite-difference Jacobian J of the time-t flow."""
    omega = np.asarray(omega, dtype=float)
    J = jacobian_fd(flow_map(omega, t, dt), np.asarray(x0, dtype=float))
    W = symplectic_form(len(omega))
    return float(np.max(np.abs(J.T @ W @ J - W)))


def divergence_fd(f, x: np.ndarray, h: float = 1e-6) -> float:
    x = np.asarray(x, dtype=float)
    total = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        total += (f(x + e)[i] - f(x - e)[i]) / (2 * h)
    return float(total)


def hamilton_divergence(omega, x0, h: float = 1e-6) -> float:
    omega = np.asarray(omega, dtype=float)
    return divergence_fd(lambda x: hamilton_rhs(omega, x), x0, h)


# State-sphere geometry.  Complex N-vectors are handled as real 2N-vectors
# [Re psi, Im psi].

def _real(psi: np.ndarray) -> np.ndarray:
    return np.concatenate([psi.real, psi.imag])


def _complex(x: np.ndarray) -> np.ndarray:
    n = x.size // 2
    return x[:n] + 1j * x[n:]


def tangent_basis(psi) -> np.ndarray:
    """Orthonormal real basis (rows) of the 2N-2 directions orthogonal to psi and i psi."""
    psi = np.asarray(psi, dtype=complex)
    fixed = np.stack([_real(psi), _real(1j * psi)])
    # rows of vh beyond the rank span the orthogonal complement
    _, _, vh = np.linalg.svd(fixed)
    return vh[2:]


def projected_drift(model: QsdModel, psi: np.ndarray) -> np.ndarray:
    """Noise-free measurement flow kept on the sphere: F - Re<psi|F> psi at psi/|psi|."""
    unit = psi / np.linalg.norm(psi)
    gd = model.G - np.vdot(unit, model.G @ unit).real * np.eye(model.dim)
    f = -1j * (model.H @ unit) - 0.5 * (gd @ (gd @ unit))
    return f - np.vdot(unit, f).real * unit


def sphere_divergence(model: QsdModel, psi, h: float = 1e-6) -> float:
    """Finite-difference divergence of the projected drift over the physical tangent directions."""
    psi = hilbert.normalize(psi)
    basis = tangent_basis(psi)
    x0 = _real(psi)
    total = 0.0
    for e in basis:
        fp = _real(projected_drift(model, _complex(x0 + h * e)))
        fm = _real(projected_drift(model, _complex(x0 - h * e)))
        total += float(e @ (fp - fm)) / (2 * h)
    return total


@dataclass
class VolumeSeries:
    times: np.ndarray
    log_volume: np.ndarray      # -inf where the cloud has collapsed
    rank: np.ndarray
    full_rank: int

    @property
    def localized(self) -> bool:
        return bool(self.rank[-1] < self.full_rank)

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "log_volume", "rank"])
        for t, v, r in zip(self.times, self.log_volume, self.rank):
            w.writerow([fmt(t), fmt(v), int(r)])
        return buf.getvalue() if fh is None else ""


RANK_TOL = 1e-30


def cloud_log_volume(reference, members) -> tuple[float, int]:
    """Half log-determinant of the cloud covariance in the tangent directions at ``reference``.

    Members are normalized and phase-aligned to the reference first, so norm
    and global phase do not contribute.  Returns (log_volume, rank); the
    log-volume is -inf when the rank is deficient.
    """
    ref = hilbert.normalize(reference)
    basis = tangent_basis(ref)
    members = np.asarray(members, dtype=complex)
    members = members / np.linalg.norm(members, axis=1)[:, None]
    overlap = members @ ref.conj()
    aligned = members * (np.abs(overlap) / np.where(overlap == 0, 1, overlap))[:, None]
    d = np.concatenate([aligned.real - ref.real, aligned.imag - ref.imag], axis=1)
    coords = d @ basis.T
    cov = np.atleast_2d(np.cov(coords, rowvar=False))
    ev = np.linalg.eigvalsh(cov)
    rank = int(np.sum(ev > RANK_TOL))
    if rank < len(ev):
        return float("-inf"), rank
    return 0.5 * float(np.sum(np.log(ev))), rank


def make_cloud(psi0, size: int, spread: float, seed: int) -> np.ndarray:
    """``size`` normalized states scattered by ``spread`` in the tangent directions of psi0."""
    psi0 = hilbert.normalize(psi0)
    basis = tangent_basis(psi0)
    rng = state_rng(seed, 0)
    offsets = spread * rng.standard_normal((size, basis.shape[0])) @ basis
    members = np.array([_complex(_real(psi0) + o) for o in offsets])
    return members / np.linalg.norm(members, axis=1)[:, None]


def volume_diagnostic(
    model: QsdModel,
    psi0,
    cloud_size: int,
    spread: float = 1e-2,
    t_final: float = 10.0,
    dt: float = 1e-3,
    seed: int = 0,
    record_every: int = 100,
    unitary: bool | None = None,
    members=None,
) -> VolumeSeries:
    """Log-volume of a state cloud evolving under ``model``.

    With G = 0 (or ``unitary=True``) the cloud is moved by the exact flow
    exp(-iHt).  Otherwise every member follows the renormalized QSD step
    driven by one shared noise path (stream 0 of ``seed``), so the result
    reflects the geometry of the stochastic flow rather than noise-induced
    scatter.  ``members`` overrides the random cloud.
    """
    psi0 = hilbert.normalize(psi0)
    n = model.dim
    if cloud_size < 2 * n + 2:
        raise InvalidArgument(f"cloud_size must be >= 2N+2 = {2 * n + 2}")
    if unitary is None:
        unitary = not np.any(model.G)
    cloud = make_cloud(psi0, cloud_size, spread, seed) if members is None else np.asarray(members, dtype=complex)
    n_steps = n_steps_for(t_final, dt)
    keep = record_steps(n_steps, record_every)
    states = np.vstack([psi0[None, :], cloud])
    times, logv, ranks = [], [], []

    def record(k, rows):
        v, r = cloud_log_volume(rows[0], rows[1:])
        times.append(k * dt)
        logv.append(v)
        ranks.append(r)

    record(0, states)
    if unitary:
        evals, evecs = np.linalg.eigh(model.H)
        coeffs = states @ evecs.conj()          # rows: components in the H eigenbasis
        for k in keep[1:]:
            phase = np.exp(-1j * evals * (k * dt))
            record(k, (coeffs * phase) @ evecs.T)
        return VolumeSeries(np.array(times), np.array(logv), np.array(ranks), 2 * n - 2)

    scheme = StepScheme("euler-renormalized", dt)
    stream = NoiseStream(seed, 0, dt)
    cols = np.ascontiguousarray(states.T)
    done = 0
    keep_set = set(keep)
    while done < n_steps:
        block = stream.next_block(min(256, n_steps - done))
        for dxi in block:
            cols, _, _ = _step_cols(model, cols, scheme, np.full(cols.shape[1], dxi))
            done += 1
            if done in keep_set:
                record(done, cols.T)
    return VolumeSeries(np.array(times), np.array(logv), np.array(ranks), 2 * n - 2)
