"""Numerical laboratory for Picard iteration with a randomly perturbed upper limit.

The operator is

    T[phi](t) = z0 + integral_{t0}^{t + delta} f(s, phi(s)) ds,  delta ~ U(-b, b),

evaluated on a fixed grid over ``[t0 - a, t0 + a]``. The integrand is
treated as piecewise linear between grid nodes (composite trapezoid) and the
first/last cell's linear piece is continued up to ``a / 2`` beyond the grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, ContractError, GridRangeError
from .sampling import RngStream


@dataclass
class PicardIterate:
    grid: np.ndarray
    values: np.ndarray
    k: int = 0

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[0] != self.grid.shape[0]:
            raise ContractError("values must have one row per grid point")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("iterate values must be finite")

    @property
    def half_width(self) -> float:
        return 0.5 * (self.grid[-1] - self.grid[0])


@dataclass
class ContractionReport:
    ratios: np.ndarray
    num: np.ndarray
    den: np.ndarray
    b: float
    a: float
    L: float
    M: float
    c: float
    skipped: int = 0
    bound: float = 0.5
    label: str = ""

    @property
    def n_trials(self) -> int:
        return int(self.ratios.size)

    @property
    def mean_ratio(self) -> float:
        return float(np.mean(self.ratios)) if self.ratios.size else 0.0

    @property
    def std_error(self) -> float:
        if self.ratios.size < 2:
            return 0.0
        return float(np.std(self.ratios, ddof=1) / np.sqrt(self.ratios.size))

    def within_bound(self, n_se: float = 3.0) -> bool:
        return self.mean_ratio <= self.bound + n_se * self.std_error


def make_grid(t0: float, a: float, resolution: float = 1e-3) -> np.ndarray:
    """Symmetric grid on ``[t0 - a, t0 + a]`` with spacing ``resolution * a``; contains ``t0``."""
    if not a > 0:
        raise ConfigError("a must be positive", key="a")
    half = int(round(1.0 / resolution))
    return t0 + a * np.linspace(-1.0, 1.0, 2 * half + 1)


def constant_iterate(z0, grid) -> PicardIterate:
    z0 = np.asarray(z0, dtype=np.float64)
    values = np.broadcast_to(z0, (len(grid),) + z0.shape).copy()
    return PicardIterate(grid, values, 0)


def _cumulative(grid, g, t0):
    h = np.diff(grid)
    cells = 0.5 * (g[1:] + g[:-1]) * (h if g.ndim == 1 else h[:, None])
    I = np.concatenate([np.zeros((1,) + g.shape[1:]), np.cumsum(cells, axis=0)])
    j0 = int(np.argmin(np.abs(grid - t0)))
    if not np.isclose(grid[j0], t0, rtol=0, atol=1e-12 * max(1.0, abs(t0))):
        raise ContractError("t0 must be a grid node")
    return I - I[j0]


def _integral_at(grid, g, I, s):
    """Exact integral of the piecewise-linear integrand from t0 to each ``s``."""
    j = np.clip(np.searchsorted(grid, s, side="right") - 1, 0, len(grid) - 2)
    u = s - grid[j]
    h = grid[j + 1] - grid[j]
    if g.ndim > 1:
        u, h = u[:, None], h[:, None]
    slope = (g[j + 1] - g[j]) / h
    return I[j] + g[j] * u + 0.5 * slope * u * u


def picard_apply(f: Callable, z0, t0: float, phi: PicardIterate, b: float, rng=None,
                 delta: float | None = None) -> PicardIterate:
    """One application of the perturbed Picard operator with a single fresh ``delta``.

    ``f(t, x)`` is vectorised over grid rows. Pass ``delta`` to fix the
    perturbation instead of drawing it from ``rng``.
    """
    grid = phi.grid
    a = phi.half_width
    if b < 0 or b > a / 2 + 1e-15:
        raise ConfigError(f"b={b} must lie in [0, a/2] with a={a}", key="b")
    if delta is None:
        if b > 0:
            gen = rng.gen if isinstance(rng, RngStream) else rng
            delta = float(gen.uniform(-b, b))
        else:
            delta = 0.0
    g = np.asarray(f(grid, phi.values), dtype=np.float64).reshape(phi.values.shape)
    I = _cumulative(grid, g, t0)
    s = grid + delta
    ext = a / 2
    if s.min() < grid[0] - ext - 1e-12 or s.max() > grid[-1] + ext + 1e-12:
        raise GridRangeError(f"t + delta reaches outside [{grid[0] - ext}, {grid[-1] + ext}]")
    z0 = np.asarray(z0, dtype=np.float64)
    return PicardIterate(grid, z0 + _integral_at(grid, g, I, s), phi.k + 1)


def delta_metric(phi_a: PicardIterate, phi_b: PicardIterate) -> float:
    """Sup over the grid of the componentwise absolute difference."""
    if phi_a.grid.shape != phi_b.grid.shape or not np.array_equal(phi_a.grid, phi_b.grid):
        raise ContractError("iterates live on different grids")
    if phi_a.values.size == 0:
        return 0.0
    return float(np.max(np.abs(phi_a.values - phi_b.values)))


def picard_sequence(f, z0, t0: float, a: float, b: float, n_iter: int, rng=None,
                    resolution: float = 1e-3) -> list[PicardIterate]:
    """``phi_0 = z0`` followed by ``n_iter`` perturbed applications."""
    phi = constant_iterate(z0, make_grid(t0, a, resolution))
    out = [phi]
    for _ in range(n_iter):
        phi = picard_apply(f, z0, t0, phi, b, rng)
        out.append(phi)
    return out


def successive_deltas(iterates) -> np.ndarray:
    return np.array([delta_metric(p, q) for p, q in zip(iterates[1:], iterates[:-1])])


def estimate_constants(f, z0, t0: float, a: float, c: float, n: int = 201):
    """Lipschitz constant L and bound M of ``f`` on the box ``|t - t0| <= 1.5 a``, ``|x - z0| <= c``.

    Dense-sampling estimates (scalar states; vector states use the
    componentwise max over a diagonal sweep).
    """
    z0 = np.atleast_1d(np.asarray(z0, dtype=np.float64))
    ts = t0 + 1.5 * a * np.linspace(-1, 1, n)
    xs = np.linspace(-c, c, n)
    T, X = np.meshgrid(ts, xs, indexing="ij")
    tt = T.ravel()
    pts = z0[None, :] + X.ravel()[:, None]
    vals = np.asarray(f(tt, pts), dtype=np.float64).reshape(pts.shape)
    M = float(np.max(np.abs(vals)))
    h = 1e-6 * max(1.0, c)
    up = np.asarray(f(tt, pts + h), dtype=np.float64).reshape(pts.shape)
    dn = np.asarray(f(tt, pts - h), dtype=np.float64).reshape(pts.shape)
    L = float(np.max(np.abs(up - dn) / (2 * h)))
    return L, M


def random_iterate(z0, grid, t0: float, c: float, gen, degree: int = 3) -> PicardIterate:
    """``z0`` plus a polynomial in ``(t - t0)/a`` with coefficients in ``[-c/4, c/4]``."""
    z0 = np.asarray(z0, dtype=np.float64)
    a = 0.5 * (grid[-1] - grid[0])
    u = (grid - t0) / a
    coeffs = gen.uniform(-c / 4, c / 4, size=(degree + 1,) + z0.shape)
    powers = np.stack([u ** j for j in range(degree + 1)], axis=1)
    pert = np.tensordot(powers, coeffs, axes=(1, 0))
    return PicardIterate(grid, z0 + pert, 0)


def empirical_contraction(f, z0, t0: float, b: float, n_trials: int, rng, a: float = 0.4,
                          c: float = 1.0, resolution: float = 1e-3) -> ContractionReport:
    """Monte-Carlo ratios ``Delta(T phi1, T phi2) / Delta(phi1, phi2)``.

    Each trial draws a fresh random pair of iterates and independent
    perturbations ``delta1`` (for ``phi1``) and ``delta2`` (for ``phi2``).
    """
    if n_trials < 100:
        raise ContractError("n_trials must be >= 100")
    gen = rng.gen if isinstance(rng, RngStream) else rng
    grid = make_grid(t0, a, resolution)
    L, M = estimate_constants(f, z0, t0, a, c)
    ratios, nums, dens = [], [], []
    skipped = 0
    for _ in range(n_trials):
        p1 = random_iterate(z0, grid, t0, c, gen)
        p2 = random_iterate(z0, grid, t0, c, gen)
        d1, d2 = (gen.uniform(-b, b, size=2) if b > 0 else (0.0, 0.0))
        den = delta_metric(p1, p2)
        if den == 0.0:
            skipped += 1
            continue
        num = delta_metric(picard_apply(f, z0, t0, p1, b, delta=float(d1)),
                           picard_apply(f, z0, t0, p2, b, delta=float(d2)))
        ratios.append(num / den)
        nums.append(num)
        dens.append(den)
    label = "" if np.size(z0) == 1 else "beyond stated hypotheses (vector state)"
    return ContractionReport(np.array(ratios), np.array(nums), np.array(dens), b, a, L, M, c,
                             skipped, label=label)


@dataclass
class TriangularStats:
    mean: float
    std: float
    counts: np.ndarray
    edges: np.ndarray
    n: int
    b: float
    density: np.ndarray = field(default=None)

    def reference_density(self) -> np.ndarray:
        """``(b - |y|) / b^2`` at the bin centres."""
        mid = 0.5 * (self.edges[1:] + self.edges[:-1])
        if self.b == 0:
            return np.zeros_like(mid)
        return np.clip(self.b - np.abs(mid), 0.0, None) / self.b ** 2


def triangular_diff_stats(b: float, n: int, rng, bins: int = 50) -> TriangularStats:
    """Statistics of ``|delta2| - |delta1|`` for independent ``delta_i ~ U(-b, b)``."""
    if n < 10_000:
        raise ContractError("n must be >= 1e4")
    if b < 0:
        raise ConfigError("b must be >= 0", key="b")
    gen = rng.gen if isinstance(rng, RngStream) else rng
    if b == 0:
        y = np.zeros(n)
        edges = np.linspace(-1.0, 1.0, bins + 1)
    else:
        d = gen.uniform(-b, b, size=(2, n))
        y = np.abs(d[1]) - np.abs(d[0])
        edges = np.linspace(-b, b, bins + 1)
    counts, edges = np.histogram(y, bins=edges)
    width = edges[1] - edges[0]
    return TriangularStats(float(y.mean()), float(y.std(ddof=1)), counts, edges, n, b,
                           counts / (n * width))


def fixed_point_residuals(f, z0, t0: float, phi: PicardIterate, b: float, n: int,
                          rng) -> np.ndarray:
    """Distribution of ``Delta(T phi, phi)`` over ``n`` fresh perturbations."""
    return np.array([delta_metric(picard_apply(f, z0, t0, phi, b, rng), phi)
                     for _ in range(n)])
