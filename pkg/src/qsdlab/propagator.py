"""Single-trajectory integration of the quantum state diffusion equation.

    d|psi> = (-i H - 1/2 G_d^2) |psi> dt + G_d |psi> dxi,   G_d = G - <G>

with the measurement rate absorbed into G.  The step consumes the finite Ito
increment dxi directly; dxi/dt is never formed.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import hilbert
from .errors import DegenerateStateError, InvalidArgument, NumericFailure
from .noise import NoiseStream

SCHEMES = ("euler-maruyama", "euler-renormalized")
NOISE_BLOCK = 256


@dataclass(frozen=True)
class QsdModel:
    H: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        h = hilbert.operator(self.H)
        g = hilbert.operator(self.G)
        if h.shape != g.shape:
            raise InvalidArgument(f"H {h.shape} and G {g.shape} differ in dimension")
        object.__setattr__(self, "H", h)
        object.__setattr__(self, "G", g)

    @classmethod
    def measurement(cls, G, H=None) -> "QsdModel":
        G = np.asarray(G, dtype=complex)
        return cls(np.zeros_like(G) if H is None else H, G)

    @property
    def dim(self) -> int:
        return self.G.shape[0]

    def commutes(self, tol: float = 1e-12) -> bool:
        return float(np.max(np.abs(self.H @ self.G - self.G @ self.H))) <= tol


@dataclass(frozen=True)
class StepScheme:
    kind: str = "euler-renormalized"
    dt: float = 1e-3

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise InvalidArgument(f"unknown scheme {self.kind!r}; expected one of {SCHEMES}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidArgument(f"dt must be positive, got {self.dt!r}")

    @property
    def renormalize(self) -> bool:
        return self.kind == "euler-renormalized"

    def check_stability(self, model: QsdModel) -> float:
        """Return dt * spectral radius of G^2, warning when it reaches 0.5."""
        radius = float(np.max(np.abs(np.linalg.eigvalsh(model.G)))) ** 2
        value = self.dt * radius
        if value >= 0.5:
            warnings.warn(f"dt * rho(G^2) = {value:.3g} >= 0.5; step is likely unstable",
                          RuntimeWarning, stacklevel=2)
        return value


def _check_dim(model: QsdModel, psi: np.ndarray) -> None:
    if psi.shape != (model.dim,):
        raise InvalidArgument(f"state of shape {psi.shape} does not match model dimension {model.dim}")


def drift(model: QsdModel, psi) -> np.ndarray:
    """(-i H - 1/2 G_d^2) psi for a normalized state."""
    psi = np.asarray(psi, dtype=complex)
    _check_dim(model, psi)
    gd = hilbert.shifted_operator(model.G, psi)
    return -1j * (model.H @ psi) - 0.5 * (gd @ (gd @ psi))


def diffusion(model: QsdModel, psi) -> np.ndarray:
    """G_d psi; the applied noise increment is this vector times dxi."""
    psi = np.asarray(psi, dtype=complex)
    _check_dim(model, psi)
    return hilbert.shifted_operator(model.G, psi) @ psi


def _coefficients(model: QsdModel, cols: np.ndarray):
    # <G> on the normalized state, even when the raw scheme lets the norm drift
    n2 = hilbert.norm2_cols(cols)
    g_psi = hilbert.apply_cols(model.G, cols)
    mean = hilbert.inner_cols(cols, g_psi).real / n2
    gd_psi = g_psi - mean * cols
    gd2_psi = hilbert.apply_cols(model.G, gd_psi) - mean * gd_psi
    a = -0.5 * gd2_psi
    if np.any(model.H):
        a = a - 1j * hilbert.apply_cols(model.H, cols)
    return a, gd_psi


def _step_cols(model: QsdModel, cols: np.ndarray, scheme: StepScheme, dxis: np.ndarray):
    a, b = _coefficients(model, cols)
    new = cols + a * scheme.dt + b * dxis
    norm = np.sqrt(hilbert.norm2_cols(new))
    bad = ~(norm > hilbert.DEGENERATE_NORM)
    if scheme.renormalize:
        new = new / np.where(bad, 1.0, norm)
    return new, norm, bad


def step_batch(model: QsdModel, psis: np.ndarray, scheme: StepScheme, dxis: np.ndarray):
    """Advance each row of ``psis`` (shape (M, N)) by one step with its own increment.

    Returns (new states, norm after the raw update, mask of degenerate rows).
    """
    new, norm, bad = _step_cols(model, np.asarray(psis, dtype=complex).T, scheme, np.asarray(dxis))
    return new.T, norm, bad


def step(model: QsdModel, psi, scheme: StepScheme, dxi: complex) -> np.ndarray:
    """One step from a normalized state with increment ``dxi``."""
    psi = np.asarray(psi, dtype=complex)
    _check_dim(model, psi)
    new, norm, bad = step_batch(model, psi[None, :], scheme, np.array([dxi], dtype=complex))
    if bad[0]:
        raise DegenerateStateError(f"state norm collapsed to {norm[0]:.3e}; reduce dt")
    return hilbert._frozen(new[0].copy())


def record_steps(n_steps: int, record_every: int) -> list[int]:
    steps = list(range(0, n_steps + 1, record_every))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return steps


def n_steps_for(t_final: float, dt: float) -> int:
    if not t_final > 0:
        raise InvalidArgument(f"t_final must be positive, got {t_final!r}")
    n = int(round(t_final / dt))
    if n < 1 or abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise InvalidArgument(f"t_final={t_final} is not a whole number of steps dt={dt}")
    return n


def integrate_batch(
    model: QsdModel,
    psis0: np.ndarray,
    scheme: StepScheme,
    streams: Sequence[NoiseStream | None],
    n_steps: int,
    record_every: int,
    on_record: Callable[[int, np.ndarray, np.ndarray], None],
) -> dict[int, float]:
    """Integrate rows of ``psis0`` with one noise stream per row.

    ``on_record(step, states, raw_norms)`` is called at step 0, every
    ``record_every`` steps and at the final step.  A ``None`` stream means
    noise off for that row.  Returns {row: time of failure} for rows whose
    norm degenerated; those rows are NaN from then on.
    """
    if record_every < 1:
        raise InvalidArgument("record_every must be >= 1")
    psis = np.asarray(psis0, dtype=complex)
    if psis.ndim != 2 or psis.shape[1] != model.dim or psis.shape[0] != len(streams):
        raise InvalidArgument("psis0 must be (trajectories, dim) with one stream per row")
    cols = np.ascontiguousarray(psis.T)
    norms = np.sqrt(hilbert.norm2_cols(cols))
    failures: dict[int, float] = {}
    on_record(0, cols.T, norms)
    steps = set(record_steps(n_steps, record_every))
    done = 0
    while done < n_steps:
        nb = min(NOISE_BLOCK, n_steps - done)
        dxis = np.ascontiguousarray(np.stack([
            s.next_block(nb) if s is not None else np.zeros(nb, dtype=complex) for s in streams
        ], axis=1))
        for j in range(nb):
            cols, norms, bad = _step_cols(model, cols, scheme, dxis[j])
            done += 1
            if bad.any():
                for row in np.flatnonzero(bad):
                    failures.setdefault(int(row), done * scheme.dt)
                cols[:, bad] = np.nan
            if done in steps:
                on_record(done, cols.T, norms)
    return failures


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    states: np.ndarray
    expectation_G: np.ndarray
    variance_G: np.ndarray
    norm: np.ndarray
    stream_id: int | None = None
    meta: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, TrajectoryRecord):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("times", "states", "expectation_G", "variance_G", "norm")
        ) and self.stream_id == other.stream_id

    def to_csv(self, fh=None, include_amplitudes: bool = True, trajectory_id: int | None = None) -> str:
        """Write the record as CSV; returns the text when ``fh`` is None."""
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        header = ([] if trajectory_id is None else ["trajectory"]) + ["t"]
        if include_amplitudes:
            for j in range(self.states.shape[1]):
                header += [f"re_{j}", f"im_{j}"]
        header += ["expectation_G", "variance_G", "norm"]
        w.writerow(header)
        for i, t in enumerate(self.times):
            row = ([] if trajectory_id is None else [trajectory_id]) + [fmt(t)]
            if include_amplitudes:
                for amp in self.states[i]:
                    row += [fmt(amp.real), fmt(amp.imag)]
            row += [fmt(self.expectation_G[i]), fmt(self.variance_G[i]), fmt(self.norm[i])]
            w.writerow(row)
        return buf.getvalue() if fh is None else ""


def fmt(x: float) -> str:
    return repr(float(x))


def observables(model: QsdModel, psis: np.ndarray):
    """Row-wise <G> and Var(G) of the normalized states."""
    cols = np.asarray(psis, dtype=complex).T
    n2 = hilbert.norm2_cols(cols)
    g_psi = hilbert.apply_cols(model.G, cols)
    mean = hilbert.inner_cols(cols, g_psi).real / n2
    second = hilbert.norm2_cols(g_psi) / n2
    return mean, np.maximum(second - mean * mean, 0.0)


def evolve_trajectory(
    model: QsdModel,
    psi0,
    scheme: StepScheme,
    stream: NoiseStream | None,
    t_final: float,
    record_every: int = 1,
) -> TrajectoryRecord:
    """Integrate one trajectory from ``psi0`` to ``t_final``.

    ``stream=None`` switches the noise off.  The ``norm`` series holds the norm
    after each raw update, i.e. before renormalization for the renormalized
    scheme.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    _check_dim(model, psi0)
    hilbert._require_normalized(psi0)
    if stream is not None and stream.dt != scheme.dt:
        raise InvalidArgument(f"stream dt {stream.dt} differs from scheme dt {scheme.dt}")
    scheme.check_stability(model)
    n = n_steps_for(t_final, scheme.dt)
    times, states, norms = [], [], []

    def keep(k, psis, raw):
        times.append(k * scheme.dt)
        states.append(psis[0].copy())
        norms.append(raw[0])

    failures = integrate_batch(model, psi0[None, :], scheme, [stream], n, record_every, keep)
    if failures:
        t = failures[0]
        raise NumericFailure(f"trajectory state degenerated at t={t:.6g}; reduce dt", t=t,
                             stream_id=None if stream is None else stream.stream_id)
    states = np.array(states)
    mean, var = observables(model, states)
    return TrajectoryRecord(
        times=np.array(times),
        states=states,
        expectation_G=mean,
        variance_G=var,
        norm=np.array(norms),
        stream_id=None if stream is None else stream.stream_id,
    )
