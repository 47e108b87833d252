"""Run configuration: JSON schema, loading and validation.

A config is one JSON object.  Operators are lists of ``[row, col, re, im]``
entries (unlisted entries are zero; both (j, k) and (k, j) must be given for
off-diagonal terms); states are lists of ``[index, re, im]`` entries or the
string ``"uniform-random"``.  See README.md for the full field list.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import hilbert
from .propagator import SCHEMES

EXPERIMENTS = (
    "trajectory", "ensemble", "lindblad", "compare", "oscillator",
    "liouville", "lagrangian-toy", "lagrangian-field", "noise-selftest",
)
# entries beyond this are rejected; smaller defects are symmetrized
HERMITIAN_REJECT_TOL = 1e-8


class ConfigError(ValueError):
    """All validation problems found in a config, each prefixed by its field path."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class RunConfig:
    experiment: str
    dimension: int
    H: list
    G: list
    psi0: object
    dt: float = 1e-3
    t_final: float = 1.0
    trajectories: int = 1
    master_seed: int = 0
    scheme: str = "euler-renormalized"
    record_every: int = 1
    output_dir: str = "out"
    workers: int = 1
    options: dict = field(default_factory=dict)

    def operator(self, name: str) -> np.ndarray:
        return entries_to_matrix(getattr(self, name), self.dimension)

    def state(self):
        if isinstance(self.psi0, str):
            return self.psi0
        return hilbert.normalize(entries_to_state(self.psi0, self.dimension))

    def canonical(self) -> dict:
        """Fields that determine the outputs (output_dir and workers do not)."""
        d = asdict(self)
        d.pop("output_dir")
        d.pop("workers")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def entries_to_matrix(entries, n: int) -> np.ndarray:
    m = np.zeros((n, n), dtype=complex)
    for row, col, re, im in entries:
        m[int(row), int(col)] += complex(re, im)
    return m


def entries_to_state(entries, n: int) -> np.ndarray:
    v = np.zeros(n, dtype=complex)
    for idx, re, im in entries:
        v[int(idx)] += complex(re, im)
    return v


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _check_entries(name, entries, width, n, errors):
    if not isinstance(entries, list):
        errors.append(f"{name}: expected a list of entries")
        return False
    ok = True
    for i, e in enumerate(entries):
        if not (isinstance(e, list) and len(e) == width):
            errors.append(f"{name}[{i}]: expected {width} numbers")
            ok = False
            continue
        idx = e[: width - 2]
        if not all(_is_int(j) and 0 <= j < n for j in idx):
            errors.append(f"{name}[{i}]: index out of range 0..{n - 1}")
            ok = False
        if not all(_is_num(x) for x in e[width - 2:]):
            errors.append(f"{name}[{i}]: re/im must be finite numbers")
            ok = False
    return ok


def _check_hermitian(name, entries, n, errors):
    m = entries_to_matrix(entries, n)
    for j in range(n):
        for k in range(j, n):
            if abs(m[j, k] - m[k, j].conjugate()) > HERMITIAN_REJECT_TOL:
                errors.append(
                    f"{name}[{j}][{k}]: entry {m[j, k]} is not the conjugate of {name}[{k}][{j}] = {m[k, j]}"
                )


def validate(raw: dict) -> RunConfig:
    """Check every field and return a RunConfig, or raise ConfigError listing all problems."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    known = {f for f in RunConfig.__dataclass_fields__} | {"options"}
    for key in raw:
        if key not in known:
            errors.append(f"{key}: unknown field")

    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        errors.append(f"experiment: must be one of {', '.join(EXPERIMENTS)}")
    n = raw.get("dimension")
    if not (_is_int(n) and 1 <= n <= 64):
        errors.append("dimension: must be an integer in 1..64")
        n = None

    for name, default_zero in (("H", True), ("G", False)):
        if name not in raw:
            if not default_zero:
                errors.append(f"{name}: required")
            continue
        if n is not None and _check_entries(name, raw[name], 4, n, errors):
            _check_hermitian(name, raw[name], n, errors)

    psi0 = raw.get("psi0", "uniform-random")
    if isinstance(psi0, str):
        if psi0 != "uniform-random":
            errors.append("psi0: string value must be 'uniform-random'")
    elif n is not None and _check_entries("psi0", psi0, 3, n, errors):
        if np.linalg.norm(entries_to_state(psi0, n)) <= hilbert.DEGENERATE_NORM:
            errors.append("psi0: zero vector")

    for key in ("dt", "t_final"):
        if key in raw and not (_is_num(raw[key]) and raw[key] > 0):
            errors.append(f"{key}: must be a positive number")
    for key in ("trajectories", "record_every", "workers"):
        if key in raw and not (_is_int(raw[key]) and raw[key] >= 1):
            errors.append(f"{key}: must be an integer >= 1")
    if "master_seed" in raw and not (_is_int(raw["master_seed"]) and 0 <= raw["master_seed"] < 2**64):
        errors.append("master_seed: must be an unsigned 64-bit integer")
    if "scheme" in raw and raw["scheme"] not in SCHEMES:
        errors.append(f"scheme: must be one of {', '.join(SCHEMES)}")
    if "output_dir" in raw and not isinstance(raw["output_dir"], str):
        errors.append("output_dir: must be a string path")
    if "options" in raw and not isinstance(raw["options"], dict):
        errors.append("options: must be an object")
    if not errors and "dt" in raw and "t_final" in raw:
        steps = raw["t_final"] / raw["dt"]
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            errors.append("t_final: must be a whole number of dt steps")
    if errors:
        raise ConfigError(errors)

    return RunConfig(
        experiment=exp,
        dimension=n,
        H=raw.get("H", []),
        G=raw["G"],
        psi0=psi0,
        dt=float(raw.get("dt", 1e-3)),
        t_final=float(raw.get("t_final", 1.0)),
        trajectories=raw.get("trajectories", 1),
        master_seed=raw.get("master_seed", 0),
        scheme=raw.get("scheme", "euler-renormalized"),
        record_every=raw.get("record_every", 1),
        output_dir=raw.get("output_dir", "out"),
        workers=raw.get("workers", 1),
        options=raw.get("options", {}),
    )


def parse_config(path) -> RunConfig:
    """Load and validate a JSON config file.  Missing files raise OSError."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: invalid JSON ({exc})"]) from None
    return validate(raw)
