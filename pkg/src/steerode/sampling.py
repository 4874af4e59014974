"""Stochastic end-time rules used during training.

Every rule maps a nominal integration interval ``(t0, t1)`` to a random end
time ``T``. Evaluation never uses these draws; see
:meth:`EndTimeSampler.eval_end_time`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SamplerDegenerateError

KINDS = ("fixed", "uniform", "gaussian", "adaptive_grid")


class RngStream:
    """Counter-based (Philox) random stream addressed by ``(seed, stream id)``.

    The same address reproduces the same draws on every platform. ``split``
    derives an independent child stream, so parallel runs never share draws.
    """

    def __init__(self, seed: int, stream: tuple[int, ...] | int = ()):
        if isinstance(stream, int):
            stream = (stream,)
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self.gen = np.random.Generator(np.random.Philox(seq))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def split(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(ids))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)


def _gen(rng) -> np.random.Generator:
    return rng.gen if isinstance(rng, RngStream) else rng


def _check_b(b, t0, t1):
    width = t1 - t0
    if not 0.0 <= b < width:
        raise ConfigError(
            f"b={b} violates the end-time bound 0 <= b < t1 - t0 = {width}", key="b")
    if width - b < 1e-6:
        warnings.warn(f"b={b} is within 1e-6 of the bound t1 - t0 = {width}", stacklevel=3)


@dataclass(frozen=True)
class EndTimeSampler:
    """Configuration of a stochastic end-time rule.

    ``t1`` is always the original nominal end time. With
    ``constrained_shift`` the uniform window is moved down so its upper edge
    sits at ``t1``.
    """

    kind: str = "fixed"
    t0: float = 0.0
    t1: float = 1.0
    b: float = 0.0
    std: float = 0.0
    clip: tuple[float, float] | None = None
    eps: float = 1e-3
    constrained_shift: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown sampler kind {self.kind!r}", key="sampler")
        if not self.t1 > self.t0:
            raise ConfigError("t1 must exceed t0", key="t1")
        if self.kind == "uniform":
            _check_b(self.b, self.t0, self.t1)
        elif self.kind == "gaussian":
            if self.std < 0:
                raise ConfigError("std must be >= 0", key="std")
            if self.clip is not None and not self.clip[0] <= self.clip[1]:
                raise ConfigError("clip must satisfy lo <= hi", key="clip")
        elif self.kind == "adaptive_grid" and not self.eps > 0:
            raise ConfigError("eps must be > 0", key="eps")

    @property
    def center(self) -> float:
        """Midpoint of the training distribution of ``T``."""
        if self.kind == "uniform" and self.constrained_shift:
            return constrained_t1(self.t1, self.b, self.t0)
        return self.t1

    def eval_end_time(self) -> float:
        """Deterministic end time used for evaluation."""
        return self.center

    def clip_bounds(self) -> tuple[float, float]:
        if self.clip is not None:
            return self.clip
        return (self.t1 - 3.0 * self.std, self.t1 + 3.0 * self.std)

    def with_interval(self, t0: float, t1: float) -> "EndTimeSampler":
        return EndTimeSampler(self.kind, t0, t1, self.b, self.std, None, self.eps,
                              self.constrained_shift)


def sample_end_time(s: EndTimeSampler, rng) -> float:
    """Draw one end time ``T > t0``; degenerate draws raise rather than re-draw."""
    T = float(sample_end_times(s, np.array([s.t0]), np.array([s.t1]), rng,
                               clip=s.clip)[0])
    return T


def sample_end_times(s: EndTimeSampler, t0s, t1s, rng, clip=None) -> np.ndarray:
    """Vectorised rule over many intervals ``(t0s[i], t1s[i])`` sharing ``s``'s settings.

    ``clip`` for the Gaussian rule is an absolute window when the batch has
    a single interval; otherwise the symmetric 3-std window around each
    ``t1s[i]`` is used.
    """
    t0s = np.asarray(t0s, dtype=np.float64)
    t1s = np.asarray(t1s, dtype=np.float64)
    g = _gen(rng)
    n = t1s.shape[0]
    if s.kind == "fixed":
        T = t1s.copy()
    elif s.kind == "uniform":
        center = t1s - s.b if s.constrained_shift else t1s
        T = center + g.uniform(-s.b, s.b, size=n) if s.b > 0 else center.copy()
    elif s.kind == "gaussian":
        T = t1s + s.std * g.standard_normal(n) if s.std > 0 else t1s.copy()
        if clip is not None:
            T = np.clip(T, clip[0], clip[1])
        else:
            T = np.clip(T, t1s - 3.0 * s.std, t1s + 3.0 * s.std)
    else:
        raise ConfigError("use adaptive_grid_end_times for the adaptive rule", key="sampler")
    bad = T <= t0s
    if np.any(bad):
        i = int(np.argmax(bad))
        raise SamplerDegenerateError(
            f"sampled end time {T[i]:.6g} <= start time {t0s[i]:.6g}")
    return T


def constrained_t1(t1_original: float, b: float, t0: float = 0.0) -> float:
    """Training end time ``t1_original - b`` so that sampled ``T`` never exceeds the original."""
    if not 0.0 <= b < t1_original - t0:
        raise ConfigError(
            f"b={b} must satisfy 0 <= b < t1_original - t0 = {t1_original - t0}", key="b")
    return t1_original - b


def adaptive_grid_end_times(times, eps: float, rng) -> np.ndarray:
    """One end time per consecutive pair of an irregular grid.

    Interval ``i`` uses half-width ``b_i = (t_{i+1} - t_i) - eps``.
    """
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size < 2:
        raise ConfigError("need at least two grid times", key="times")
    gaps = np.diff(times)
    if np.any(gaps <= 0):
        raise ConfigError("grid times must be strictly ascending", key="times")
    if not eps > 0:
        raise ConfigError("eps must be > 0", key="eps")
    too_small = eps > gaps
    if np.any(too_small):
        i = int(np.argmax(too_small))
        raise ConfigError(
            f"eps={eps} exceeds gap {gaps[i]:.6g} of interval {i} "
            f"({times[i]:.6g}, {times[i + 1]:.6g})", key="eps")
    b = gaps - eps
    T = times[1:] + _gen(rng).uniform(-1.0, 1.0, size=gaps.size) * b
    return T


def adaptive_half_widths(times, eps: float) -> np.ndarray:
    return np.diff(np.asarray(times, dtype=np.float64)) - eps
