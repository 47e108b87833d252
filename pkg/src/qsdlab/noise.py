"""Complex Ito increments with reproducible, independently keyed streams.

Each increment is dxi = sqrt(dt/2) (x + i y) with x, y independent standard
normals, so that M dxi = 0, M dxi^2 = 0 and M |dxi|^2 = dt.  Streams are keyed
by (master seed, stream id) through ``numpy.random.SeedSequence`` spawn keys
and use the counter-based Philox bit generator, so trajectory ``k`` always sees
the same noise no matter which worker runs it or in what order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

NOISE_PURPOSE = 0
STATE_PURPOSE = 1

_U64 = 2**64


def _generator(seed: int, stream_id: int, purpose: int) -> np.random.Generator:
    if not (0 <= seed < _U64 and 0 <= stream_id < _U64):
        raise InvalidArgument("seed and stream_id must be unsigned 64-bit integers")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id), purpose))
    return np.random.Generator(np.random.Philox(ss))


def state_rng(seed: int, stream_id: int) -> np.random.Generator:
    """Generator for per-trajectory initial-state sampling, disjoint from the noise."""
    return _generator(seed, stream_id, STATE_PURPOSE)


@dataclass
class NoiseStream:
    """Sequence of complex increments for one trajectory."""

    seed: int
    stream_id: int
    dt: float
    _rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidArgument(f"dt must be positive, got {self.dt!r}")
        self._rng = _generator(self.seed, self.stream_id, NOISE_PURPOSE)
        self._scale = np.sqrt(self.dt / 2.0)

    def next_increment(self) -> complex:
        x, y = self._rng.standard_normal(2)
        return complex(self._scale * x, self._scale * y)

    def next_block(self, n: int) -> np.ndarray:
        """The next ``n`` increments; identical to ``n`` calls of next_increment."""
        xy = self._rng.standard_normal(2 * n).reshape(n, 2)
        return self._scale * xy[:, 0] + 1j * (self._scale * xy[:, 1])


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float

    def within(self, target: float, k: float = 4.0) -> bool:
        return abs(self.value - target) <= k * self.stderr

    def to_dict(self):
        return {"value": self.value, "stderr": self.stderr}


def _mean(x: np.ndarray) -> Estimate:
    return Estimate(float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size)))


@dataclass(frozen=True)
class MomentReport:
    seed: int
    stream_count: int
    draws_per_stream: int
    dt: float
    mean_re: Estimate
    mean_im: Estimate
    square_re: Estimate
    square_im: Estimate
    abs_square: Estimate
    var_re: Estimate
    var_im: Estimate
    cov_re_im: Estimate
    cross_corr_re: float | None
    cross_corr_im: float | None

    def checks(self, k: float = 4.0) -> dict:
        half = self.dt / 2.0
        out = {
            "mean_zero": self.mean_re.within(0.0, k) and self.mean_im.within(0.0, k),
            "square_zero": self.square_re.within(0.0, k) and self.square_im.within(0.0, k),
            "abs_square_dt": self.abs_square.within(self.dt, k),
            "component_variance": self.var_re.within(half, k) and self.var_im.within(half, k),
            "component_covariance_zero": self.cov_re_im.within(0.0, k),
        }
        if self.cross_corr_re is not None:
            bound = k / np.sqrt(self.draws_per_stream)
            out["cross_stream_independent"] = (
                abs(self.cross_corr_re) < bound and abs(self.cross_corr_im) < bound
            )
        return out

    def passed(self, k: float = 4.0) -> bool:
        return all(self.checks(k).values())

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "stream_count": self.stream_count,
            "draws_per_stream": self.draws_per_stream,
            "dt": self.dt,
            "cross_corr_re": self.cross_corr_re,
            "cross_corr_im": self.cross_corr_im,
        }
        for name in ("mean_re", "mean_im", "square_re", "square_im", "abs_square",
                     "var_re", "var_im", "cov_re_im"):
            d[name] = getattr(self, name).to_dict()
        d["checks"] = self.checks()
        return d


def moment_report(seed: int, stream_count: int, draws_per_stream: int, dt: float) -> MomentReport:
    """Sample moments of the increments pooled over ``stream_count`` streams."""
    if stream_count < 1 or draws_per_stream < 1:
        raise InvalidArgument("stream_count and draws_per_stream must be >= 1")
    blocks = np.stack(
        [NoiseStream(seed, sid, dt).next_block(draws_per_stream) for sid in range(stream_count)]
    )
    z = blocks.ravel()
    re, im = z.real, z.imag
    sq = z * z
    cross_re = cross_im = None
    if stream_count >= 2 and draws_per_stream >= 2:
        cross_re = float(np.corrcoef(blocks[0].real, blocks[1].real)[0, 1])
        cross_im = float(np.corrcoef(blocks[0].imag, blocks[1].imag)[0, 1])
    return MomentReport(
        seed=seed,
        stream_count=stream_count,
        draws_per_stream=draws_per_stream,
        dt=dt,
        mean_re=_mean(re),
        mean_im=_mean(im),
        square_re=_mean(sq.real),
        square_im=_mean(sq.imag),
        abs_square=_mean(re * re + im * im),
        var_re=_mean((re - re.mean()) ** 2),
        var_im=_mean((im - im.mean()) ** 2),
        cov_re_im=_mean((re - re.mean()) * (im - im.mean())),
        cross_corr_re=cross_re,
        cross_corr_im=cross_im,
    )
