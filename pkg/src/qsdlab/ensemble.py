"""Trajectory ensembles and measurement diagnostics.

Trajectories are processed in fixed chunks of stream ids.  Every chunk is a
deterministic function of (spec, chunk index), and chunk partial sums are
combined in chunk order, so results do not depend on how many workers run
the chunks.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import hilbert
from .errors import InvalidArgument, NumericFailure
from .lindblad import RhoSeries, trace_distance
from .noise import NoiseStream, state_rng
from .propagator import (
    QsdModel,
    StepScheme,
    fmt,
    integrate_batch,
    n_steps_for,
    observables,
    record_steps,
)

UNIFORM = "uniform-random"
CHUNK = 1000


@dataclass(frozen=True)
class EnsembleSpec:
    model: QsdModel
    psi0: object
    scheme: StepScheme
    trajectories: int
    master_seed: int
    t_final: float
    record_every: int = 1

    def __post_init__(self):
        if self.trajectories < 1:
            raise InvalidArgument("trajectories must be >= 1")
        if isinstance(self.psi0, str):
            if self.psi0 != UNIFORM:
                raise InvalidArgument(f"psi0 must be a state or {UNIFORM!r}")
        else:
            psi0 = np.asarray(self.psi0, dtype=complex)
            if psi0.shape != (self.model.dim,):
                raise InvalidArgument("psi0 dimension does not match the model")
            hilbert._require_normalized(psi0)
            object.__setattr__(self, "psi0", hilbert.state(psi0))
        n_steps_for(self.t_final, self.scheme.dt)

    @property
    def n_steps(self) -> int:
        return n_steps_for(self.t_final, self.scheme.dt)

    @property
    def times(self) -> np.ndarray:
        return np.array(record_steps(self.n_steps, self.record_every)) * self.scheme.dt

    def initial_states(self, stream_ids) -> np.ndarray:
        if isinstance(self.psi0, str):
            n = self.model.dim
            return np.array([hilbert.haar_state(state_rng(self.master_seed, s), n) for s in stream_ids])
        return np.tile(self.psi0, (len(stream_ids), 1))


@dataclass
class _Chunk:
    stream_ids: range
    mean_g: np.ndarray        # (R, m)
    var_g: np.ndarray         # (R, m)
    rho_sum: np.ndarray       # (R, N, N)
    pop_sum: np.ndarray       # (R, K)
    final_pops: np.ndarray    # (m, K)
    failures: dict


def _run_chunk(spec: EnsembleSpec, ids: range, eigvals, projectors) -> _Chunk:
    model = spec.model
    psis0 = spec.initial_states(ids)
    streams = [NoiseStream(spec.master_seed, s, spec.scheme.dt) for s in ids]
    R = len(record_steps(spec.n_steps, spec.record_every))
    K = len(eigvals)
    out = _Chunk(
        stream_ids=ids,
        mean_g=np.empty((R, len(ids))),
        var_g=np.empty((R, len(ids))),
        rho_sum=np.empty((R, model.dim, model.dim), dtype=complex),
        pop_sum=np.empty((R, K)),
        final_pops=np.empty((len(ids), K)),
        failures={},
    )
    r = 0

    def record(k, psis, raw):
        nonlocal r
        mean, var = observables(model, psis)
        out.mean_g[r] = mean
        out.var_g[r] = var
        cols = psis.T
        unit = cols / np.sqrt(hilbert.norm2_cols(cols))
        out.rho_sum[r] = np.einsum("im,jm->ij", unit, unit.conj())
        pops = np.stack(
            [hilbert.inner_cols(unit, hilbert.apply_cols(p, unit)).real for p in projectors], axis=1
        )
        out.pop_sum[r] = pops.sum(axis=0)
        out.final_pops[:] = pops
        r += 1

    failures = integrate_batch(model, psis0, spec.scheme, streams, spec.n_steps, spec.record_every, record)
    out.failures = {ids[row]: t for row, t in failures.items()}
    return out


@dataclass
class EnsembleStats:
    times: np.ndarray
    trajectories: int
    master_seed: int
    eigenvalues: np.ndarray
    mean_rho: np.ndarray            # (R, N, N)
    mean_G: np.ndarray              # (R,)
    se_G: np.ndarray                # (R,)
    mean_variance: np.ndarray       # (R,)
    mean_populations: np.ndarray    # (R, K)
    final_assignment: np.ndarray    # (M,) index into eigenvalues
    final_max_population: np.ndarray
    per_trajectory_G: np.ndarray = field(repr=False)   # (R, M)
    per_trajectory_variance: np.ndarray = field(repr=False)
    commuting: bool = True
    pure_measurement: bool = False

    def occupation_fractions(self) -> np.ndarray:
        counts = np.bincount(self.final_assignment, minlength=len(self.eigenvalues))
        return counts / self.trajectories

    def localized_fraction(self, threshold: float = 0.99) -> float:
        return float(np.mean(self.final_max_population >= threshold))

    def summary(self) -> dict:
        return {
            "trajectories": self.trajectories,
            "master_seed": self.master_seed,
            "t_final": float(self.times[-1]),
            "eigenvalues": self.eigenvalues.tolist(),
            "final_fractions": self.occupation_fractions().tolist(),
            "localized_fraction": self.localized_fraction(),
            "final_mean_G": float(self.mean_G[-1]),
            "final_se_G": float(self.se_G[-1]),
            "final_mean_variance": float(self.mean_variance[-1]),
        }

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        n = self.mean_rho.shape[1]
        header = ["t", "mean_G", "se_G", "mean_variance_G"]
        header += [f"population_{k}" for k in range(len(self.eigenvalues))]
        for j in range(n):
            for k in range(n):
                header += [f"re_rho_{j}{k}", f"im_rho_{j}{k}"]
        w.writerow(header)
        for i, t in enumerate(self.times):
            row = [fmt(t), fmt(self.mean_G[i]), fmt(self.se_G[i]), fmt(self.mean_variance[i])]
            row += [fmt(p) for p in self.mean_populations[i]]
            for z in self.mean_rho[i].ravel():
                row += [fmt(z.real), fmt(z.imag)]
            w.writerow(row)
        return buf.getvalue() if fh is None else ""


def run_ensemble(spec: EnsembleSpec, workers: int = 1, chunk_size: int = CHUNK) -> EnsembleStats:
    """Run ``spec.trajectories`` trajectories with stream ids 0..M-1."""
    spec.scheme.check_stability(spec.model)
    eigvals, projectors = hilbert.eigenprojectors(spec.model.G)
    M = spec.trajectories
    chunks = [range(a, min(a + chunk_size, M)) for a in range(0, M, chunk_size)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ids: _run_chunk(spec, ids, eigvals, projectors), chunks))
    else:
        parts = [_run_chunk(spec, ids, eigvals, projectors) for ids in chunks]

    failures = {}
    for p in parts:
        failures.update(p.failures)
    if failures:
        listing = ", ".join(f"{s}@t={t:.6g}" for s, t in sorted(failures.items()))
        raise NumericFailure(f"{len(failures)} trajectories degenerated: {listing}")

    rho_sum = parts[0].rho_sum.copy()
    pop_sum = parts[0].pop_sum.copy()
    for p in parts[1:]:
        rho_sum += p.rho_sum
        pop_sum += p.pop_sum
    g = np.concatenate([p.mean_g for p in parts], axis=1)
    var = np.concatenate([p.var_g for p in parts], axis=1)
    final_pops = np.concatenate([p.final_pops for p in parts], axis=0)
    se = g.std(axis=1, ddof=1) / np.sqrt(M) if M > 1 else np.full(g.shape[0], np.nan)
    return EnsembleStats(
        times=spec.times,
        trajectories=M,
        master_seed=spec.master_seed,
        eigenvalues=eigvals,
        mean_rho=rho_sum / M,
        mean_G=g.mean(axis=1),
        se_G=se,
        mean_variance=var.mean(axis=1),
        mean_populations=pop_sum / M,
        final_assignment=final_pops.argmax(axis=1),
        final_max_population=final_pops.max(axis=1),
        per_trajectory_G=g,
        per_trajectory_variance=var,
        commuting=spec.model.commutes(),
        pure_measurement=not np.any(spec.model.H),
    )


@dataclass
class ComparisonReport:
    times: np.ndarray
    distances: np.ndarray
    threshold: float

    @property
    def max_distance(self) -> float:
        return float(self.distances.max())

    @property
    def passed(self) -> bool:
        return self.max_distance < self.threshold

    def to_dict(self) -> dict:
        return {
            "max_distance": self.max_distance,
            "threshold": self.threshold,
            "pass": self.passed,
            "times": self.times.tolist(),
            "distances": self.distances.tolist(),
        }


def compare_to_lindblad(stats: EnsembleStats, oracle: RhoSeries) -> ComparisonReport:
    """Trace distance between the ensemble-mean density matrix and the oracle."""
    if len(oracle) != len(stats.times) or not np.allclose(oracle.times, stats.times, rtol=0, atol=1e-9):
        raise InvalidArgument("ensemble and oracle time grids differ")
    d = np.array([trace_distance(a, b) for a, b in zip(stats.mean_rho, oracle.rhos)])
    return ComparisonReport(stats.times, d, 5.0 / np.sqrt(stats.trajectories) + 0.01)


@dataclass
class MartingaleReport:
    status: str                 # "pass", "fail" or "skipped"
    times: np.ndarray
    drift: np.ndarray           # M<G>(t) - M<G>(0)
    stderr: np.ndarray
    per_time_pass: np.ndarray

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "times": self.times.tolist(),
            "drift": self.drift.tolist(),
            "stderr": self.stderr.tolist(),
            "per_time_pass": self.per_time_pass.tolist(),
        }


def martingale_check(stats: EnsembleStats, k: float = 4.0, exact_tol: float = 1e-12) -> MartingaleReport:
    """Test that M<G>(t) stays at its t=0 value when [H, G] = 0.

    Uses the per-trajectory increments <G>(t) - <G>(0), so random initial
    states do not inflate the error bar.  Zero-spread times must match to
    ``exact_tol``.
    """
    empty = np.array([])
    if not stats.commuting:
        return MartingaleReport("skipped", stats.times, empty, empty, np.array([], dtype=bool))
    d = stats.per_trajectory_G - stats.per_trajectory_G[0]
    drift = d.mean(axis=1)
    M = stats.trajectories
    se = d.std(axis=1, ddof=1) / np.sqrt(M) if M > 1 else np.zeros(len(drift))
    ok = np.abs(drift) <= np.maximum(k * se, exact_tol)
    return MartingaleReport("pass" if ok.all() else "fail", stats.times, drift, se, ok)


@dataclass
class LocalizationCurve:
    times: np.ndarray
    mean_variance: np.ndarray
    localized: bool | None      # None when the H=0, t_final >= 10 gate does not apply

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "mean_variance": self.mean_variance.tolist(),
                "localized": self.localized}


def localization_curve(stats: EnsembleStats, threshold: float = 0.01) -> LocalizationCurve:
    applies = stats.pure_measurement and stats.times[-1] >= 10.0
    localized = bool(stats.mean_variance[-1] < threshold) if applies else None
    return LocalizationCurve(stats.times, stats.mean_variance, localized)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj) -> str:
    """Stable JSON text (sorted keys, numpy values unwrapped)."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)


@dataclass
class WeakOrderReport:
    dts: np.ndarray
    errors: np.ndarray          # M<G>(T) - Tr(G rho(T)) per dt
    stderr: np.ndarray
    slope: float

    def to_dict(self) -> dict:
        return {"dts": self.dts.tolist(), "errors": self.errors.tolist(),
                "stderr": self.stderr.tolist(), "slope": self.slope}


def _control_variate_mean(model: QsdModel, psi0, scheme: StepScheme, t_final: float,
                          trajectories: int, seed: int, chunk_size: int):
    """Per-trajectory <G>(T) minus its first- and second-order noise terms.

    Both subtracted sums, 2 Var(G) Re(dxi) and <G_d^3> (|dxi|^2 - dt), are
    evaluated at the start of each step, so they have mean exactly zero and
    the estimator keeps the mean of <G>(T) while shedding most of its spread.
    """
    from .propagator import _step_cols

    n = n_steps_for(t_final, scheme.dt)
    values = []
    for start in range(0, trajectories, chunk_size):
        ids = range(start, min(start + chunk_size, trajectories))
        streams = [NoiseStream(seed, s, scheme.dt) for s in ids]
        cols = np.tile(np.asarray(psi0, dtype=complex)[:, None], (1, len(ids)))
        y = np.zeros(len(ids))
        done = 0
        while done < n:
            nb = min(256, n - done)
            dxis = np.ascontiguousarray(np.stack([s.next_block(nb) for s in streams], axis=1))
            for dxi in dxis:
                mean, var = observables(model, cols.T)
                gd = hilbert.apply_cols(model.G, cols) - mean * cols
                third = hilbert.inner_cols(gd, hilbert.apply_cols(model.G, gd) - mean * gd).real
                y += 2 * var * dxi.real + third * (dxi.real ** 2 + dxi.imag ** 2 - scheme.dt)
                cols, _, _ = _step_cols(model, cols, scheme, dxi)
            done += nb
        final, _ = observables(model, cols.T)
        values.append(final - y)
    v = np.concatenate(values)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def weak_order_study(model: QsdModel, psi0, dts=(4e-3, 2e-3, 1e-3), t_final: float = 1.0,
                     trajectories: int = 20000, seed: int = 0, kind: str = "euler-renormalized",
                     chunk_size: int = 2000) -> WeakOrderReport:
    """Weak error of M<G>(t_final) against the master equation, and its log-log slope in dt."""
    from .lindblad import evolve_rho

    psi0 = hilbert.normalize(psi0)
    rho0 = hilbert.projector(psi0)
    errors, ses = [], []
    for dt in dts:
        scheme = StepScheme(kind, dt)
        oracle = evolve_rho(model, rho0, dt, t_final).rhos[-1]
        exact = float(np.trace(model.G @ oracle).real)
        mean, se = _control_variate_mean(model, psi0, scheme, t_final, trajectories, seed, chunk_size)
        errors.append(mean - exact)
        ses.append(se)
    errors = np.array(errors)
    slope = float(np.polyfit(np.log(dts), np.log(np.abs(errors)), 1)[0])
    return WeakOrderReport(np.array(dts), errors, np.array(ses), slope)
