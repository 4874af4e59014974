"""Stiff scalar ODE benchmark: problem family, closed forms, training and evaluation.

The base problem is ``dy/dt = -r y + 3 r - 2 r exp(-t)`` with ``y(0) = 0``.
A net ``f(y, t)`` is fit from short-interval pairs ``(y(t0), y(t0 + dt))``
and evaluated by chaining interval solves across a longer test range.
"""
from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from .autodiff import Mlp, Tape, backward, mlp_forward, param_grads
from .errors import ConfigError, DivergenceError, SteerError
from .ode import SolverConfig, dopri5_solve, interpolate
from .optim import Adam
from .sampling import EndTimeSampler, RngStream, sample_end_times

log = logging.getLogger(__name__)

VARIANTS = ("base", "multi_exp", "periodic", "steady7")


@dataclass(frozen=True)
class StiffProblem:
    """Linear scalar test problem ``dy/dt = -r y + r S + forcing(t)``, ``y(0) = 0``.

    ``base``       S = 3, forcing -2r e^{-t}
    ``multi_exp``  S = 3, forcing -2r sum_k e^{-k t}  (``ks`` includes the base rate 1)
    ``periodic``   base plus r sin(t)
    ``steady7``    S = 7, forcing -2r e^{-t}
    """

    variant: str = "base"
    r: float = 1000.0
    ks: tuple[float, ...] = (1.0, 10.0)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}", key="variant")
        if not self.r > 1:
            raise ConfigError("stiffness parameter r must exceed 1", key="r")
        for k in self._rates():
            if k == self.r:
                raise ConfigError(f"decay rate {k} coincides with r", key="ks")

    closed_form = True

    @property
    def steady_state(self) -> float:
        return 7.0 if self.variant == "steady7" else 3.0

    @property
    def stiffness_ratio(self) -> float:
        # eigenvalue -r of the homogeneous part against the slowest forcing rate
        return self.r / min(self._rates())

    def _rates(self):
        return tuple(self.ks) if self.variant == "multi_exp" else (1.0,)

    def rhs(self, y, t):
        r = self.r
        out = -r * y + r * self.steady_state
        for k in self._rates():
            out = out - 2.0 * r * np.exp(-k * t)
        if self.variant == "periodic":
            out = out + r * np.sin(t)
        return out

    def _coefficients(self):
        r = self.r
        amps = {k: -2.0 * r / (r - k) for k in self._rates()}
        p = q = 0.0
        if self.variant == "periodic":
            p, q = r * r / (1 + r * r), -r / (1 + r * r)
        c = -(self.steady_state + sum(amps.values()) + q)
        return amps, p, q, c

    def solution(self, t):
        t = np.asarray(t, dtype=np.float64)
        amps, p, q, c = self._coefficients()
        y = self.steady_state + c * np.exp(-self.r * t) + p * np.sin(t) + q * np.cos(t)
        for k, a in amps.items():
            y = y + a * np.exp(-k * t)
        return y


def stiff_rhs(p: StiffProblem) -> Callable:
    """Right-hand side ``(y, t) -> dy/dt`` of the chosen variant."""
    return p.rhs


def stiff_solution(r: float, t):
    """Closed form of the base problem: 3 - (r-3)/(r-1) e^{-rt} - 2r/(r-1) e^{-t}."""
    if r == 1:
        raise ConfigError("closed form is singular at r = 1", key="r")
    t = np.asarray(t, dtype=np.float64)
    return 3.0 - (r - 3.0) / (r - 1.0) * np.exp(-r * t) - 2.0 * r / (r - 1.0) * np.exp(-t)


@dataclass
class TrainConfig:
    variant: str = "base"
    r: float = 1000.0
    hidden: int = 500
    dt: float = 0.125
    train_lo: float = 0.0
    train_hi: float = 15.0
    test_lo: float = 0.0
    test_hi: float = 25.0
    n_train: int = 1000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 400
    sampler: str = "auto"
    b: float = 0.0
    std: float = 0.0
    gauss_clip: float = 0.0
    constrained_shift: bool = False
    rtol: float = 1e-5
    atol: float = 1e-7
    max_steps: int = 20_000
    eval_every: int = 10
    n_grid: int = 2001
    closed_loop: bool = True
    t0_grid: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive", key="dt")
        if self.hidden < 1 or self.n_train < 1 or self.epochs < 0:
            raise ConfigError("hidden, n_train must be >= 1 and epochs >= 0", key="hidden")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1", key="eval_every")
        if self.test_hi <= self.test_lo or self.train_hi <= self.train_lo:
            raise ConfigError("ranges must be ascending", key="test_hi")
        self.problem()
        self.end_time_sampler()
        self.solver()

    def problem(self) -> StiffProblem:
        return StiffProblem(self.variant, self.r)

    def sampler_kind(self) -> str:
        """``auto`` picks uniform when b > 0, gaussian when std > 0, else fixed."""
        if self.sampler != "auto":
            return self.sampler
        if self.b > 0:
            return "uniform"
        return "gaussian" if self.std > 0 else "fixed"

    def end_time_sampler(self) -> EndTimeSampler:
        try:
            return EndTimeSampler(kind=self.sampler_kind(), t0=0.0, t1=self.dt, b=self.b,
                                  std=self.std, constrained_shift=self.constrained_shift)
        except ConfigError as exc:
            if exc.key == "b":
                raise ConfigError(
                    f"b={self.b} violates the end-time bound b < t1 - t0 = dt = {self.dt}",
                    key="b") from None
            raise

    def clip_halfwidth(self) -> float:
        """Symmetric Gaussian clip around t1; 0 means min(3 std, dt - 1e-3)."""
        if self.gauss_clip > 0:
            return self.gauss_clip
        return min(3.0 * self.std, self.dt - 1e-3)

    def solver(self) -> SolverConfig:
        return SolverConfig("dopri5", self.rtol, self.atol, max_steps=self.max_steps)


CSV_FIELDS = ("seed", "variant", "r", "sampler_kind", "b", "std", "hidden", "lr", "epochs",
              "rtol", "atol", "min_test_mse", "final_test_mse", "min_epoch", "total_nfe",
              "wall_secs", "dt", "status")


@dataclass
class RunRecord:
    config: TrainConfig
    min_test_mse: float = math.inf
    final_test_mse: float = math.inf
    min_epoch: int = -1
    total_nfe: int = 0
    wall_secs: float = 0.0
    status: str = "ok"
    final_gap: float = math.nan
    history: dict = field(default_factory=dict)

    def row(self, wall_time: bool = False) -> dict:
        c = self.config
        return {
            "seed": c.seed, "variant": c.variant, "r": c.r, "sampler_kind": c.sampler_kind(),
            "b": c.b, "std": c.std, "hidden": c.hidden, "lr": c.lr, "epochs": c.epochs,
            "rtol": c.rtol, "atol": c.atol, "min_test_mse": self.min_test_mse,
            "final_test_mse": self.final_test_mse, "min_epoch": self.min_epoch,
            "total_nfe": self.total_nfe,
            "wall_secs": self.wall_secs if wall_time else math.nan,
            "dt": c.dt, "status": self.status,
        }


def make_training_set(cfg: TrainConfig, rng) -> dict[str, np.ndarray]:
    """Random starts ``t0`` in the training range with exact endpoint values.

    With ``t0_grid`` the starts are drawn from the interval grid instead, so
    ``t0 = train_lo`` (the fast transient) appears in the data.
    """
    p = cfg.problem()
    gen = rng.gen if isinstance(rng, RngStream) else rng
    if cfg.t0_grid:
        # starts restricted to the interval grid train_lo + k * dt
        n_cells = int(round((cfg.train_hi - cfg.train_lo) / cfg.dt))
        t0 = cfg.train_lo + cfg.dt * gen.integers(0, n_cells, size=cfg.n_train)
    else:
        t0 = gen.uniform(cfg.train_lo, cfg.train_hi, size=cfg.n_train)
    t1 = t0 + cfg.dt
    return {"t0": t0, "y0": p.solution(t0), "t1": t1, "y1": p.solution(t1)}


def make_model(cfg: TrainConfig, rng) -> Mlp:
    gen = rng.gen if isinstance(rng, RngStream) else rng
    return Mlp.init([2, cfg.hidden, 1], gen)


def sample_train_end_times(cfg: TrainConfig, data, rng) -> np.ndarray:
    s = cfg.end_time_sampler()
    clip = None
    if s.kind == "gaussian":
        w = cfg.clip_halfwidth()
        clip = (data["t1"] - w, data["t1"] + w)
    return sample_end_times(s, data["t0"], data["t1"], rng, clip=clip)


def batch_loss_grad(net: Mlp, t0, y0, T, yT, solver: SolverConfig):
    """Mean squared error at per-sample end times, and its parameter gradient.

    Each sample is integrated over its own ``[t0_i, T_i]`` by rescaling to
    ``s in [0, 1]``: ``dz/ds = D_i f(z, t0_i + s D_i)``, ``D_i = T_i - t0_i``.
    The end times are constants; no gradient flows through them.
    """
    tape = Tape()
    D = (T - t0)[:, None]
    t0c = t0[:, None]

    def f(s, z):
        return D * mlp_forward(net, z, t0c + s * D, tape)

    res = dopri5_solve(f, y0[:, None], 0.0, 1.0, solver, tape)
    err = res.final - yT[:, None]
    loss = (err * err).mean()
    grads = param_grads(tape, backward(tape, loss), net.params())
    return float(loss.value), grads, res.nfe


def _as_dynamics(model) -> Callable:
    if isinstance(model, Mlp):
        return lambda t, y: mlp_forward(model, y, t)
    return model


@dataclass
class Evaluation:
    mse: float
    times: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    n_clamped: int = 0
    nfe: int = 0


CLAMP = 1e3


def eval_mse(model, problem: StiffProblem, test_range=(0.0, 25.0), n_grid: int = 2001,
             dt: float = 0.125, solver: SolverConfig | None = None,
             closed_loop: bool = True) -> Evaluation:
    """Chain interval solves across ``test_range`` and score against the closed form.

    ``model`` is an :class:`Mlp` or any ``f(t, y)``. Closed loop starts each
    interval from the previous prediction; open loop restarts from the truth.
    Points after a divergence are clamped to +-1e3 and counted.
    """
    solver = solver or SolverConfig(max_steps=20_000)
    f = _as_dynamics(model)
    lo, hi = test_range
    grid = np.linspace(lo, hi, n_grid)
    truth = problem.solution(grid)
    pred = np.empty_like(grid)
    n_int = int(round((hi - lo) / dt))
    edges = lo + dt * np.arange(n_int + 1)
    edges[-1] = hi
    y = np.array([[float(problem.solution(lo))]])
    pred[0] = y[0, 0]
    nfe = 0
    diverged_at = None
    for k in range(n_int):
        a, b = edges[k], edges[k + 1]
        if not closed_loop:
            y = np.array([[float(problem.solution(a))]])
        sel = (grid > a) & (grid <= b) if k else (grid >= a) & (grid <= b)
        try:
            res = dopri5_solve(f, y, a, b, solver)
        except (DivergenceError, FloatingPointError, SteerError):
            diverged_at = k
            break
        nfe += res.nfe
        if not np.all(np.isfinite(res.final_value)):
            diverged_at = k
            break
        pred[sel] = interpolate(res, grid[sel])[:, 0, 0]
        y = res.final_value
    n_clamped = 0
    if diverged_at is not None:
        start = edges[diverged_at]
        bad = grid > start if diverged_at else np.ones_like(grid, dtype=bool)
        last = float(np.clip(y[0, 0], -CLAMP, CLAMP)) if np.all(np.isfinite(y)) else CLAMP
        pred[bad] = last
        n_clamped = int(bad.sum())
    pred = np.clip(pred, -CLAMP, CLAMP)
    mse = float(np.mean((pred - truth) ** 2))
    return Evaluation(mse, grid, truth, pred, n_clamped, nfe)


def train(cfg: TrainConfig, keep_history: bool = True):
    """Fit the stiff problem with the configured end-time rule.

    Returns ``(record, best_model)``. The test MSE is computed every
    ``eval_every`` epochs (and after the last one) at unperturbed end times.
    """
    cfg.validate()
    start = time.perf_counter()
    rs = RngStream(cfg.seed)
    problem = cfg.problem()
    data = make_training_set(cfg, rs.split(1))
    net = make_model(cfg, rs.split(0))
    opt = Adam(net.params(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    t_rng = rs.split(2)
    solver = cfg.solver()
    rec = RunRecord(cfg)
    hist = {"epoch": [], "train_loss": [], "nfe": [], "eval_epoch": [], "test_mse": []}
    best = net
    evaluation = None

    def evaluate(epoch):
        nonlocal best, evaluation
        ev = eval_mse(net, problem, (cfg.test_lo, cfg.test_hi), cfg.n_grid, cfg.dt,
                      solver, cfg.closed_loop)
        hist["eval_epoch"].append(epoch)
        hist["test_mse"].append(ev.mse)
        rec.final_test_mse = ev.mse
        rec.final_gap = abs(float(ev.y_pred[-1]) - problem.steady_state)
        if ev.mse < rec.min_test_mse:
            rec.min_test_mse, rec.min_epoch, best, evaluation = ev.mse, epoch, net, ev

    try:
        for epoch in range(1, cfg.epochs + 1):
            T = sample_train_end_times(cfg, data, t_rng)
            yT = problem.solution(T)
            loss, grads, nfe = batch_loss_grad(net, data["t0"], data["y0"], T, yT, solver)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            net = net.with_params(opt.step(grads))
            rec.total_nfe += nfe
            hist["epoch"].append(epoch)
            hist["train_loss"].append(loss)
            hist["nfe"].append(nfe)
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                evaluate(epoch)
        if cfg.epochs == 0:
            evaluate(0)
    except (DivergenceError, FloatingPointError) as exc:
        log.warning("run seed=%s failed: %s", cfg.seed, exc)
        rec.status = "failed"
    rec.wall_secs = time.perf_counter() - start
    if keep_history:
        rec.history = hist
        rec.history["best_eval"] = evaluation
    return rec, best


def _run_cell(cfg: TrainConfig):
    try:
        rec, _ = train(cfg, keep_history=True)
    except SteerError as exc:
        log.warning("cell %s failed: %s", cfg, exc)
        rec = RunRecord(cfg, status="failed")
    rec.history.pop("best_eval", None)
    return rec


def expand_grid(base: TrainConfig, grid: dict[str, Sequence], seeds: Sequence[int]):
    """Cartesian product of ``grid`` in key order, seeds innermost."""
    keys = list(grid)
    names = {f.name for f in fields(TrainConfig)}
    for k in keys:
        if k not in names:
            raise ConfigError(f"unknown sweep key {k!r}", key=k)
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        for seed in seeds:
            cells.append(replace(base, **dict(zip(keys, values)), seed=seed))
    return cells


def sweep(base: TrainConfig, grid: dict[str, Sequence], seeds: Sequence[int] = (0,),
          workers: int = 1) -> list[RunRecord]:
    """One :class:`RunRecord` per cell and seed, in deterministic order.

    A failing cell yields a record with ``status == "failed"``; the sweep
    continues.
    """
    if not grid:
        raise ConfigError("sweep grid must be non-empty", key="grid")
    cells = expand_grid(base, grid, seeds)
    if workers <= 1:
        return [_run_cell(c) for c in cells]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, cells))


def median_min_mse(records: Sequence[RunRecord]) -> float:
    return float(np.median([r.min_test_mse for r in records]))


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
