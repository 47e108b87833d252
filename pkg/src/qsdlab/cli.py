"""Command-line front end: ``qsdlab run CONFIG`` and ``qsdlab selftest``.

Exit status: 0 on success, 1 for invalid configs or unusable output
directories, 2 for numeric failures.
"""
from __future__ import annotations

import argparse
import platform
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .ensemble import (
    EnsembleSpec,
    compare_to_lindblad,
    dumps,
    localization_curve,
    martingale_check,
    run_ensemble,
)
from .errors import QsdError
from .lagrangian import (
    ExtendedFieldState,
    el_residual,
    extended_divergence,
    linear_field_consistency,
    momentum_drift_experiment,
    psi_divergence,
    toy_divergence,
    toy_divergence_fd,
    toy_evolve,
    toy_model,
    toy_q_divergence,
)
from .lindblad import evolve_rho
from .noise import NoiseStream, moment_report
from .oscillator import hamilton_flow_check, volume_diagnostic
from .propagator import QsdModel, StepScheme, evolve_trajectory, fmt

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class Outputs:
    """Writes artifacts into one directory and remembers their names."""

    def __init__(self, root: Path, stem: str):
        self.root = root
        self.stem = stem
        self.files: list[str] = []

    def write(self, suffix: str, text: str) -> None:
        name = f"{self.stem}_{suffix}"
        (self.root / name).write_text(text, encoding="utf-8")
        self.files.append(name)

    def json(self, suffix: str, obj) -> None:
        self.write(suffix, dumps(obj) + "\n")


def _model(cfg: RunConfig) -> QsdModel:
    return QsdModel(cfg.operator("H"), cfg.operator("G"))


def _fixed_state(cfg: RunConfig) -> np.ndarray:
    psi0 = cfg.state()
    if isinstance(psi0, str):
        raise ConfigError([f"psi0: experiment {cfg.experiment!r} needs an explicit initial state"])
    return psi0


def _ensemble_spec(cfg: RunConfig) -> EnsembleSpec:
    return EnsembleSpec(_model(cfg), cfg.state(), StepScheme(cfg.scheme, cfg.dt), cfg.trajectories,
                        cfg.master_seed, cfg.t_final, cfg.record_every)


def _oracle(cfg: RunConfig, model: QsdModel):
    psi0 = cfg.state()
    rho0 = np.eye(model.dim) / model.dim if isinstance(psi0, str) else np.outer(psi0, psi0.conj())
    return evolve_rho(model, rho0, cfg.dt, cfg.t_final, cfg.record_every)


def _ensemble_reports(stats) -> dict:
    return {
        "summary": stats.summary(),
        "martingale": martingale_check(stats).to_dict(),
        "localization": localization_curve(stats).to_dict(),
    }


def exp_trajectory(cfg, out):
    rec = evolve_trajectory(_model(cfg), _fixed_state(cfg), StepScheme(cfg.scheme, cfg.dt),
                            NoiseStream(cfg.master_seed, 0, cfg.dt), cfg.t_final, cfg.record_every)
    out.write("trajectory.csv", rec.to_csv(include_amplitudes=cfg.options.get("amplitudes", True)))


def exp_ensemble(cfg, out):
    stats = run_ensemble(_ensemble_spec(cfg), workers=cfg.workers)
    out.write("ensemble.csv", stats.to_csv())
    out.json("ensemble.json", _ensemble_reports(stats))


def exp_lindblad(cfg, out):
    out.write("lindblad.csv", _oracle(cfg, _model(cfg)).to_csv())


def exp_compare(cfg, out):
    spec = _ensemble_spec(cfg)
    stats = run_ensemble(spec, workers=cfg.workers)
    oracle = _oracle(cfg, spec.model)
    report = compare_to_lindblad(stats, oracle)
    out.write("ensemble.csv", stats.to_csv())
    out.write("lindblad.csv", oracle.to_csv())
    out.json("compare.json", {"comparison": report.to_dict(), **_ensemble_reports(stats)})


def exp_oscillator(cfg, out):
    model = _model(cfg)
    omega = cfg.options.get("omega", np.diag(model.H).real.tolist())
    report = hamilton_flow_check(omega, _fixed_state(cfg), cfg.t_final, cfg.dt)
    out.json("oscillator.json", report.to_dict())


def exp_liouville(cfg, out):
    model = _model(cfg)
    psi0 = _fixed_state(cfg)
    series = volume_diagnostic(
        model, psi0,
        cloud_size=cfg.options.get("cloud_size", 2 * model.dim + 6),
        spread=cfg.options.get("spread", 1e-2),
        t_final=cfg.t_final, dt=cfg.dt, seed=cfg.master_seed, record_every=cfg.record_every,
    )
    out.write("volume.csv", series.to_csv())
    nu = complex(*cfg.options.get("nu", [0.0, 0.0]))
    state = ExtendedFieldState.from_psi(psi0)
    out.json("divergence.json", {
        "psi_only_divergence": psi_divergence(model, psi0, nu),
        "extended_divergence": extended_divergence(model, state, nu),
        "log_volume_change": float(series.log_volume[-1] - series.log_volume[0]),
        "localized": series.localized,
    })


def exp_lagrangian_toy(cfg, out):
    opts = cfg.options
    toy = toy_model(opts.get("toy", "linear"), **opts.get("params", {"a": -1.0}))
    q0, qp0 = opts.get("q0", 1.0), opts.get("q_prime0", 1.0)
    times, q, qp = toy_evolve(toy, q0, qp0, cfg.t_final, cfg.dt, cfg.record_every)
    lines = ["t,q,q_prime"] + [f"{fmt(t)},{fmt(a)},{fmt(b)}" for t, a, b in zip(times, q, qp)]
    out.write("toy.csv", "\n".join(lines) + "\n")
    report = {
        "extended_divergence": toy_divergence(toy, q0, qp0),
        "extended_divergence_fd": toy_divergence_fd(toy, q0, qp0),
        "q_only_divergence": toy_q_divergence(toy, q0),
    }
    if "omega" in opts:
        lf = linear_field_consistency(opts["omega"], complex(q0), t_final=cfg.t_final, dt=cfg.dt)
        report["linear_field_max_conj_deviation"] = float(lf.conj_deviation.max())
    out.json("toy.json", report)


def exp_lagrangian_field(cfg, out):
    model = _model(cfg)
    psi0 = _fixed_state(cfg)
    noise = None if cfg.options.get("noise_off") else NoiseStream(cfg.master_seed, 0, cfg.dt)
    series = momentum_drift_experiment(model, psi0, cfg.t_final, cfg.dt, noise, cfg.record_every)
    out.write("momentum_drift.csv", series.to_csv())
    nu = complex(*cfg.options.get("nu", [0.0, 0.0]))
    state = ExtendedFieldState.from_psi(psi0)
    res = el_residual(model, state, nu)
    out.json("lagrangian.json", {
        "failed_at": series.failed_at,
        "final_deviation": float(series.deviation[-1]),
        "extended_divergence": extended_divergence(model, state, nu),
        "psi_only_divergence": psi_divergence(model, psi0, nu),
        "el_residual_psi_equation": res.psi_equation,
        "el_residual_psi_prime_equation": res.psi_prime_equation,
    })


def exp_noise_selftest(cfg, out):
    opts = cfg.options
    report = moment_report(cfg.master_seed, opts.get("streams", cfg.trajectories),
                           opts.get("draws", 10000), cfg.dt)
    out.json("noise.json", report.to_dict())


EXPERIMENTS = {
    "trajectory": exp_trajectory,
    "ensemble": exp_ensemble,
    "lindblad": exp_lindblad,
    "compare": exp_compare,
    "oscillator": exp_oscillator,
    "liouville": exp_liouville,
    "lagrangian-toy": exp_lagrangian_toy,
    "lagrangian-field": exp_lagrangian_field,
    "noise-selftest": exp_noise_selftest,
}


def _origin(exc: BaseException) -> str:
    """Module of the innermost qsdlab frame that raised ``exc``."""
    name = "qsdlab"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("qsdlab."):
            name = mod
        tb = tb.tb_next
    return name


def run(cfg: RunConfig, log=None) -> int:
    """Execute ``cfg.experiment`` and write its artifacts plus a manifest."""
    log = sys.stderr if log is None else log
    start = time.time()
    started = datetime.now(timezone.utc).isoformat()
    root = Path(cfg.output_dir)
    digest = cfg.config_hash()
    try:
        root.mkdir(parents=True, exist_ok=True)
        probe = root / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"io error: cannot write to output_dir {cfg.output_dir!r}: {exc}", file=log)
        return EXIT_INVALID
    out = Outputs(root, f"{cfg.experiment}_{digest[:12]}_s{cfg.master_seed}")
    try:
        EXPERIMENTS[cfg.experiment](cfg, out)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=log)
        return EXIT_INVALID
    except OSError as exc:
        print(f"io error: {exc}", file=log)
        return EXIT_INVALID
    except (QsdError, ArithmeticError) as exc:
        print(f"numeric failure in {_origin(exc)}: {exc}", file=log)
        return EXIT_NUMERIC
    manifest = {
        "config_hash": digest,
        "master_seed": cfg.master_seed,
        "experiment": cfg.experiment,
        "start_time": started,
        "wall_seconds": time.time() - start,
        "artifact_list": out.files,
        "config": cfg.canonical(),
        "versions": {"qsdlab": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    (root / f"{out.stem}_manifest.json").write_text(dumps(manifest) + "\n", encoding="utf-8")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qsdlab", description="Quantum state diffusion laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--seed-override", type=int, default=None)
    p_run.add_argument("--workers", type=int, default=None)
    p_self = sub.add_parser("selftest", help="print noise moment statistics as JSON")
    p_self.add_argument("--seed", type=int, default=1)
    p_self.add_argument("--streams", type=int, default=100)
    p_self.add_argument("--draws", type=int, default=10000)
    p_self.add_argument("--dt", type=float, default=0.01)
    args = parser.parse_args(argv)

    if args.command == "selftest":
        report = moment_report(args.seed, args.streams, args.draws, args.dt)
        print(dumps(report.to_dict()))
        return EXIT_OK if report.passed() else EXIT_NUMERIC

    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"validation error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.seed_override is not None:
        cfg = replace(cfg, master_seed=args.seed_override)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
