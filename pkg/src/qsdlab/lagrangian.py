"""Doubled-coordinate Lagrangian dynamics.

Toy model: with L = -q' dq/dt + q' f(q) the motion is

    dq/dt = f(q),    dq'/dt = -q' f'(q),

whose flow in (q, q') is divergence-free although the q-flow alone is not.

Field system: coordinates (psi, psi') with the starred pair fixed as their
complex conjugates.  The real action is the integral of Lc + Lc* with

    Lc = -i psi'.dpsi/dt + psi'.H psi + i psi'.Q psi,
    Q  = -1/2 (G - g)^2 + (G - g) nu,     g = psi^dag G psi,

where "." is the plain bilinear sum over basis indices and nu is the noise
rate held fixed over a step.  Varying psi' gives the QSD equation.  Varying
psi gives

    dpsi'/dt = i H^T psi' - Q^T psi' - 2i Im(c) G^T conj(psi),
    c = psi'.(G - g - nu) psi,

where the last term collects the dependence of g on psi through both Lc and
Lc*.  Its divergence cancels that of the psi equation exactly.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgument
from .noise import NoiseStream
from .propagator import QsdModel, fmt, n_steps_for, record_steps

# ---------------------------------------------------------------- toy model


@dataclass(frozen=True)
class ToyModel:
    name: str
    f: Callable
    df: Callable
    params: dict

    def rhs(self, q, qp):
        return self.f(q), -qp * self.df(q)


def _linear(a=-1.0):
    return (lambda q: a * q), (lambda q: a + 0 * q)


def _cubic(a=1.0, b=1.0):
    return (lambda q: a * q - b * q ** 3), (lambda q: a - 3 * b * q ** 2)


TOY_REGISTRY = {"linear": _linear, "cubic": _cubic}


def toy_model(name: str, **params) -> ToyModel:
    """A registered toy drift; ``df`` is checked against finite differences."""
    try:
        f, df = TOY_REGISTRY[name](**params)
    except KeyError:
        raise InvalidArgument(f"unknown toy model {name!r}; choose from {sorted(TOY_REGISTRY)}") from None
    h = 1e-5
    for q in np.linspace(-2.0, 2.0, 9):
        fd = (f(q + h) - f(q - h)) / (2 * h)
        if abs(fd - df(q)) > 1e-6 * max(1.0, abs(df(q))):
            raise InvalidArgument(f"derivative of {name} disagrees with finite differences at q={q}")
    return ToyModel(name, f, df, dict(params))


def toy_step(model: ToyModel, q, qp, dt: float):
    """One RK4 step of the (q, q') system.  The q stages never read q'."""
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    f, df = model.f, model.df
    k1 = f(q)
    k2 = f(q + 0.5 * dt * k1)
    k3 = f(q + 0.5 * dt * k2)
    k4 = f(q + dt * k3)
    q_stages = (q, q + 0.5 * dt * k1, q + 0.5 * dt * k2, q + dt * k3)
    l1 = -qp * df(q_stages[0])
    l2 = -(qp + 0.5 * dt * l1) * df(q_stages[1])
    l3 = -(qp + 0.5 * dt * l2) * df(q_stages[2])
    l4 = -(qp + dt * l3) * df(q_stages[3])
    return (q + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4),
            qp + (dt / 6.0) * (l1 + 2 * l2 + 2 * l3 + l4))


def toy_evolve(model: ToyModel, q0, qp0, t_final: float, dt: float, record_every: int = 1):
    n = n_steps_for(t_final, dt)
    keep = set(record_steps(n, record_every))
    q, qp = q0, qp0
    times, qs, qps = [0.0], [q0], [qp0]
    for k in range(1, n + 1):
        q, qp = toy_step(model, q, qp, dt)
        if k in keep:
            times.append(k * dt)
            qs.append(q)
            qps.append(qp)
    return np.array(times), np.array(qs), np.array(qps)


def toy_divergence(model: ToyModel, q, qp) -> float:
    """d(dq/dt)/dq + d(dq'/dt)/dq' = f'(q) - f'(q)."""
    slope = model.df(q)
    return float(np.real(slope - slope))


def toy_divergence_fd(model: ToyModel, q: float, qp: float, h: float = 1e-6) -> float:
    dq = (model.f(q + h) - model.f(q - h)) / (2 * h)
    dqp = (-(qp + h) * model.df(q) + (qp - h) * model.df(q)) / (2 * h)
    return float(dq + dqp)


def toy_q_divergence(model: ToyModel, q) -> float:
    """Divergence of the q-flow alone, f'(q)."""
    return float(np.real(model.df(q)))


def toy_momenta(q, qp):
    """(p, p') = (dL/d(dq/dt), dL/d(dq'/dt)) = (-q', q) for the primed Lagrangian pair."""
    return -qp, q


def toy_coordinates(p, pp):
    return pp, -p


@dataclass
class LinearFieldReport:
    omega: float
    times: np.ndarray
    q: np.ndarray
    qp: np.ndarray
    conj_deviation: np.ndarray       # |q' - conj(q)|
    closed_form_error: float         # max over q and q' against the exponentials

    @property
    def consistent(self) -> bool:
        return float(self.conj_deviation.max()) < 1e-8


def linear_field_consistency(omega: float, q0: complex, qp0: complex | None = None,
                             t_final: float = 10.0, dt: float = 1e-3) -> LinearFieldReport:
    """Evolve f(q) = i omega q with its partner equation for q'.

    With q'(0) = conj(q(0)) the partner stays the complex conjugate.
    """
    q0 = complex(q0)
    qp0 = q0.conjugate() if qp0 is None else complex(qp0)
    model = toy_model("linear", a=1j * omega)
    times, q, qp = toy_evolve(model, q0, qp0, t_final, dt)
    exact_q = q0 * np.exp(1j * omega * times)
    exact_qp = qp0 * np.exp(-1j * omega * times)
    err = max(float(np.max(np.abs(q - exact_q))), float(np.max(np.abs(qp - exact_qp))))
    return LinearFieldReport(omega, times, q, qp, np.abs(qp - np.conj(q)), err)


# ------------------------------------------------------------ field system


@dataclass(frozen=True)
class ExtendedFieldState:
    """(psi, psi') with the starred coordinates materialized as conjugates."""

    psi: np.ndarray
    psi_prime: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=complex)
        psi_prime = np.asarray(self.psi_prime, dtype=complex)
        if psi.shape != psi_prime.shape or psi.ndim != 1:
            raise InvalidArgument("psi and psi' must be vectors of equal length")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "psi_prime", psi_prime)

    @classmethod
    def from_psi(cls, psi) -> "ExtendedFieldState":
        psi = np.asarray(psi, dtype=complex)
        return cls(psi, psi.conj())

    @property
    def psi_star(self) -> np.ndarray:
        return self.psi.conj()

    @property
    def psi_star_prime(self) -> np.ndarray:
        return self.psi_prime.conj()

    @property
    def p_psi(self) -> np.ndarray:
        return -1j * self.psi_prime

    @property
    def p_psi_star(self) -> np.ndarray:
        return 1j * self.psi_star_prime

    def deviation(self) -> float:
        """|psi' - conj(psi)|."""
        return float(np.linalg.norm(self.psi_prime - self.psi.conj()))


def _g(model: QsdModel, psi: np.ndarray) -> float:
    return float(np.vdot(psi, model.G @ psi).real)


def psi_rhs(model: QsdModel, psi: np.ndarray, nu: complex) -> np.ndarray:
    """-i H psi + Q psi.  Reads psi only."""
    g = _g(model, psi)
    gd_psi = model.G @ psi - g * psi
    return -1j * (model.H @ psi) - 0.5 * (model.G @ gd_psi - g * gd_psi) + nu * gd_psi


def psi_prime_rhs(model: QsdModel, psi: np.ndarray, psi_prime: np.ndarray, nu: complex) -> np.ndarray:
    """Euler-Lagrange equation for psi' from varying the real action in psi."""
    g = _g(model, psi)
    GT = model.G.T
    gdt_pp = GT @ psi_prime - g * psi_prime
    qt_pp = -0.5 * (GT @ gdt_pp - g * gdt_pp) + nu * gdt_pp
    c = psi_prime @ (model.G @ psi - (g + nu) * psi)
    return 1j * (model.H.T @ psi_prime) - qt_pp - 2j * c.imag * (GT @ psi.conj())


def qsd_field_rhs(model: QsdModel, state: ExtendedFieldState, nu: complex = 0.0):
    """Time derivatives (dpsi/dt, dpsi'/dt) at frozen noise rate ``nu``."""
    if state.psi.shape != (model.dim,):
        raise InvalidArgument(f"state dimension {state.psi.shape} does not match model {model.dim}")
    return psi_rhs(model, state.psi, nu), psi_prime_rhs(model, state.psi, state.psi_prime, nu)


# Real coordinates x = [Re psi, Im psi, Re psi', Im psi'].

def pack(psi, psi_prime) -> np.ndarray:
    return np.concatenate([psi.real, psi.imag, psi_prime.real, psi_prime.imag])


def unpack(x: np.ndarray):
    n = x.size // 4
    return x[:n] + 1j * x[n:2 * n], x[2 * n:3 * n] + 1j * x[3 * n:]


def field_vector(model: QsdModel, nu: complex, psi_only: bool = False):
    """The flow as a real vector field on 4N (or 2N with ``psi_only``) coordinates."""
    if psi_only:
        def f(x):
            n = x.size // 2
            d = psi_rhs(model, x[:n] + 1j * x[n:], nu)
            return np.concatenate([d.real, d.imag])
        return f

    def f(x):
        psi, pp = unpack(x)
        return pack(psi_rhs(model, psi, nu), psi_prime_rhs(model, psi, pp, nu))
    return f


def _div_fd(f, x: np.ndarray, h: float) -> float:
    total = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        total += (f(x + e)[i] - f(x - e)[i]) / (2 * h)
    return float(total)


def extended_divergence(model: QsdModel, state: ExtendedFieldState, nu: complex = 0.0, h: float = 1e-6) -> float:
    """Finite-difference divergence of the (psi, psi') flow in 4N real coordinates."""
    return _div_fd(field_vector(model, nu), pack(state.psi, state.psi_prime), h)


def psi_divergence(model: QsdModel, psi, nu: complex = 0.0, h: float = 1e-6) -> float:
    """Finite-difference divergence of the psi flow alone in 2N real coordinates."""
    psi = np.asarray(psi, dtype=complex)
    return _div_fd(field_vector(model, nu, psi_only=True), np.concatenate([psi.real, psi.imag]), h)


def psi_divergence_analytic(model: QsdModel, psi, nu: complex = 0.0) -> float:
    """2 Re[tr Q + psi^dag G (G - g - nu) psi]; the H part is traceless in the real sense."""
    psi = np.asarray(psi, dtype=complex)
    g = _g(model, psi)
    gd = model.G - g * np.eye(model.dim)
    tr_q = -0.5 * np.trace(gd @ gd) + nu * np.trace(gd)
    chain = np.vdot(psi, model.G @ (gd @ psi - nu * psi))
    return float(2 * (tr_q + chain).real)


def extended_divergence_analytic(model: QsdModel, state: ExtendedFieldState, nu: complex = 0.0) -> float:
    """Sum of the psi and psi' contributions, each evaluated separately."""
    psi = state.psi
    g = _g(model, psi)
    gd = model.G - g * np.eye(model.dim)
    q = -0.5 * gd @ gd + nu * gd
    chain = np.vdot(psi, model.G @ (gd @ psi - nu * psi))
    from_psi = np.trace(-1j * model.H + q) + chain
    from_prime = np.trace(1j * model.H.T - q.T) - chain
    return float(2 * from_psi.real + 2 * from_prime.real)


def lagrangian(model: QsdModel, x: np.ndarray, v: np.ndarray, nu: complex) -> float:
    """Real Lagrangian Lc + Lc* at coordinates ``x`` and velocities ``v`` (packed)."""
    psi, pp = unpack(x)
    psi_dot, _ = unpack(v)
    g = _g(model, psi)
    gd_psi = model.G @ psi - g * psi
    q_psi = -0.5 * (model.G @ gd_psi - g * gd_psi) + nu * gd_psi
    lc = -1j * (pp @ psi_dot) + pp @ (model.H @ psi) + 1j * (pp @ q_psi)
    return float(2 * lc.real)


@dataclass
class ELResidual:
    psi_equation: float         # residual of the psi' variation (checks dpsi/dt)
    psi_prime_equation: float   # residual of the psi variation (checks dpsi'/dt)

    @property
    def max(self) -> float:
        return max(self.psi_equation, self.psi_prime_equation)


def el_residual(
    model: QsdModel,
    state: ExtendedFieldState,
    nu: complex = 0.0,
    prime_rhs: Callable | None = None,
    h: float = 1e-5,
    tau: float = 1e-3,
) -> ELResidual:
    """Euler-Lagrange residual of a candidate flow, by finite differences of the action.

    The trajectory through ``state`` is generated from dpsi/dt and
    ``prime_rhs`` (defaults to the implemented psi' equation).  At t = 0 the
    residual d/dt (dL/dv) - dL/dx is formed with central differences in the
    coordinates (step ``h``) and a fourth-order central difference in time
    (step ``tau``) along the trajectory.
    """
    prime_rhs = psi_prime_rhs if prime_rhs is None else prime_rhs

    def flow(x):
        psi, pp = unpack(x)
        return pack(psi_rhs(model, psi, nu), prime_rhs(model, psi, pp, nu))

    def L(x, v):
        return lagrangian(model, x, v, nu)

    def momenta(x):
        v = flow(x)
        out = np.empty_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = 1.0
            out[i] = 0.5 * (L(x, v + e) - L(x, v - e))   # L is linear in v
        return out

    def advance(x, t):
        steps = 8
        dt = t / steps
        for _ in range(steps):
            k1 = flow(x)
            k2 = flow(x + 0.5 * dt * k1)
            k3 = flow(x + 0.5 * dt * k2)
            k4 = flow(x + dt * k3)
            x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return x

    x0 = pack(state.psi, state.psi_prime)
    v0 = flow(x0)
    p = {s: momenta(advance(x0, s * tau)) for s in (-2, -1, 1, 2)}
    dp_dt = (-p[2] + 8 * p[1] - 8 * p[-1] + p[-2]) / (12 * tau)
    dL_dx = np.empty_like(x0)
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        dL_dx[i] = (L(x0 + e, v0) - L(x0 - e, v0)) / (2 * h)
    r = np.abs(dp_dt - dL_dx)
    n2 = x0.size // 2
    # coordinates psi pair with the psi' equation and vice versa
    return ELResidual(psi_equation=float(r[n2:].max()), psi_prime_equation=float(r[:n2].max()))


@dataclass
class DriftSeries:
    times: np.ndarray
    deviation: np.ndarray       # |psi' - conj(psi)|
    psi_norm: np.ndarray
    psi_prime_norm: np.ndarray
    failed_at: float | None = None

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "deviation_norm", "psi_norm", "psi_prime_norm"])
        for row in zip(self.times, self.deviation, self.psi_norm, self.psi_prime_norm):
            w.writerow([fmt(v) for v in row])
        return buf.getvalue() if fh is None else ""


BLOWUP = 1e100


def extended_step(model: QsdModel, psi, psi_prime, dt: float, dxi: complex, propagator=None):
    """One step of the (psi, psi') system with the noise rate frozen at dxi/dt.

    The H part is applied exactly (``propagator`` = exp(-iH dt)), the
    measurement part by an explicit Euler step, then psi alone is
    renormalized.  The psi marginal is the Euler-Maruyama QSD step up to the
    treatment of H.
    """
    if propagator is None:
        evals, evecs = np.linalg.eigh(model.H)
        propagator = (evecs * np.exp(-1j * evals * dt)) @ evecs.conj().T
    nu = dxi / dt
    free = QsdModel.measurement(model.G)
    d_psi = psi_rhs(free, psi, nu)
    d_pp = psi_prime_rhs(free, psi, psi_prime, nu)
    psi = psi + dt * d_psi
    psi_prime = psi_prime + dt * d_pp
    psi = psi / np.linalg.norm(psi)
    return propagator @ psi, propagator.conj() @ psi_prime


def momentum_drift_experiment(
    model: QsdModel,
    psi0,
    t_final: float,
    dt: float,
    stream: NoiseStream | None = None,
    record_every: int = 1,
) -> DriftSeries:
    """Co-integrate (psi, psi') from psi'(0) = conj(psi0) and track |psi' - conj(psi)|.

    ``stream=None`` switches the noise off.  If psi' stops being finite or
    exceeds 1e100 in norm, the series ends there and ``failed_at`` holds the
    time.
    """
    psi = np.asarray(psi0, dtype=complex)
    if psi.shape != (model.dim,):
        raise InvalidArgument("psi0 dimension does not match the model")
    if stream is not None and stream.dt != dt:
        raise InvalidArgument("stream dt differs from dt")
    pp = psi.conj()
    evals, evecs = np.linalg.eigh(model.H)
    u = (evecs * np.exp(-1j * evals * dt)) @ evecs.conj().T
    n = n_steps_for(t_final, dt)
    keep = set(record_steps(n, record_every))
    times, dev, npsi, npp = [0.0], [0.0], [np.linalg.norm(psi)], [np.linalg.norm(pp)]
    failed = None
    noise = iter(())
    for k in range(1, n + 1):
        if stream is None:
            dxi = 0j
        else:
            dxi = next(noise, None)
            if dxi is None:
                noise = iter(stream.next_block(min(256, n - k + 1)))
                dxi = next(noise)
        psi, pp = extended_step(model, psi, pp, dt, dxi, u)
        size = np.linalg.norm(pp)
        if not np.isfinite(size) or size > BLOWUP or not np.all(np.isfinite(psi)):
            failed = k * dt
            break
        if k in keep:
            times.append(k * dt)
            dev.append(float(np.linalg.norm(pp - psi.conj())))
            npsi.append(float(np.linalg.norm(psi)))
            npp.append(float(size))
    return DriftSeries(np.array(times), np.array(dev), np.array(npsi), np.array(npp), failed)
