"""One-dimensional continuous normalizing flow with an exact trace term.

The flow transports a standard normal at ``t0`` to the data at the end time.
A data point ``x`` is scored by integrating the augmented state
``(z, delta_logp)`` backwards from ``(x, 0)`` at ``T`` to ``t0`` under
``d/dt (z, delta_logp) = (f(z, t), -df/dz)``; then

    log p(x) = log N(z(t0); 0, 1) - delta_logp(t0).

In 1D the trace is the scalar ``df/dz``, obtained exactly by forward-mode
tangents through the net.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Mlp, Tape, Var, backward, concat, mlp_forward, mlp_forward_tangent,
                       param_grads)
from .errors import ContractError, DivergenceError
from .ode import SolverConfig, dopri5_solve
from .optim import Adam
from .sampling import EndTimeSampler, RngStream, sample_end_time

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class CnfState:
    z: float
    delta_logp: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([[self.z, self.delta_logp]])

    @classmethod
    def from_array(cls, a) -> "CnfState":
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        return cls(float(a[0]), float(a[1]))


@dataclass(frozen=True)
class MogSpec:
    """Mixture of 1D Gaussians. The defaults are a test fixture, not reported values."""

    means: tuple[float, ...] = (-2.0, 2.0)
    stds: tuple[float, ...] = (0.5, 0.5)
    weights: tuple[float, ...] = (0.5, 0.5)
    label: str = "fixture MoG"

    def __post_init__(self):
        if not (len(self.means) == len(self.stds) == len(self.weights)) or not self.means:
            raise ContractError("means, stds and weights must have equal non-zero length")
        if any(s <= 0 for s in self.stds) or any(w <= 0 for w in self.weights):
            raise ContractError("stds and weights must be positive")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ContractError("weights must sum to 1")

    def sample(self, n: int, rng) -> np.ndarray:
        gen = rng.gen if isinstance(rng, RngStream) else rng
        comp = gen.choice(len(self.weights), size=n, p=np.array(self.weights))
        return np.array(self.means)[comp] + np.array(self.stds)[comp] * gen.standard_normal(n)

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)[..., None]
        m, s, w = (np.array(v) for v in (self.means, self.stds, self.weights))
        comp = np.log(w) - 0.5 * LOG_2PI - np.log(s) - 0.5 * ((x - m) / s) ** 2
        top = comp.max(axis=-1, keepdims=True)
        return (top + np.log(np.exp(comp - top).sum(axis=-1, keepdims=True)))[..., 0]


def std_normal_logpdf(z):
    return -0.5 * LOG_2PI - 0.5 * z * z


def cnf_rhs(net: Mlp, tape: Tape | None = None):
    """Augmented dynamics ``f(t, state) -> (f(z, t), -df/dz)`` on states of shape (B, 2)."""
    if net.dim != 1:
        raise ContractError("the 1D flow needs a net with 1-dimensional state")

    def rhs(t, state):
        if isinstance(state, Var) or tape is not None:
            st = state if isinstance(state, Var) else tape.leaf(state)
            f, df = mlp_forward_tangent(net, st[:, 0:1], t, tape or st.tape)
            return concat([f, -df], axis=1)
        f, df = mlp_forward_tangent(net, np.asarray(state)[:, 0:1], t)
        return np.concatenate([f, -df], axis=1)

    return rhs


def _initial(x):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return np.stack([x, np.zeros_like(x)], axis=1)


def log_likelihood(net: Mlp, x, t0: float, T: float, solver: SolverConfig | None = None,
                   return_nfe: bool = False):
    """``log p(x)`` under the flow ending at time ``T``; vectorised over ``x``."""
    solver = solver or SolverConfig(rtol=1e-7, atol=1e-9)
    scalar = np.ndim(x) == 0
    res = dopri5_solve(cnf_rhs(net), _initial(x), T, t0, solver)
    out = res.final_value
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite likelihood solve")
    lp = std_normal_logpdf(out[:, 0]) - out[:, 1]
    lp = float(lp[0]) if scalar else lp
    return (lp, res.nfe) if return_nfe else lp


def nll_loss_grad(net: Mlp, x, t0: float, T: float, solver: SolverConfig):
    """Mean negative log-likelihood of a batch and its parameter gradients."""
    tape = Tape()
    res = dopri5_solve(cnf_rhs(net, tape), _initial(x), T, t0, solver, tape)
    z, dlp = res.final[:, 0:1], res.final[:, 1:2]
    # -log N(z; 0, 1) + delta_logp, averaged
    nll = (0.5 * LOG_2PI + 0.5 * (z * z) + dlp).mean()
    grads = param_grads(tape, backward(tape, nll), net.params())
    return float(nll.value), grads, res.nfe


@dataclass
class CnfConfig:
    hidden: tuple[int, ...] = (32, 32)
    n_train: int = 10_000
    n_eval: int = 2_000
    batch: int = 256
    iters: int = 300
    lr: float = 1e-2
    eval_every: int = 10
    b: float = 0.0
    constrained_shift: bool = True
    t0: float = 0.0
    t1: float = 1.0
    rtol: float = 1e-5
    atol: float = 1e-7
    max_steps: int = 5_000
    threshold: float = 0.15
    seed: int = 0

    def sampler(self) -> EndTimeSampler:
        if self.b == 0:
            return EndTimeSampler("fixed", self.t0, self.t1)
        return EndTimeSampler("uniform", self.t0, self.t1, b=self.b,
                              constrained_shift=self.constrained_shift)

    def solver(self) -> SolverConfig:
        return SolverConfig("dopri5", self.rtol, self.atol, max_steps=self.max_steps)


@dataclass
class CnfRun:
    config: CnfConfig
    model: Mlp
    oracle_nll: float
    history: dict = field(default_factory=dict)
    status: str = "ok"

    @property
    def final_nll(self) -> float:
        return self.history["nll"][-1] if self.history.get("nll") else float("inf")

    @property
    def best_nll(self) -> float:
        return min(self.history["nll"]) if self.history.get("nll") else float("inf")

    def nfe_to_threshold(self) -> float:
        """Cumulative training NFE at the first evaluation within ``threshold`` of the oracle."""
        target = self.oracle_nll + self.config.threshold
        for nll, nfe in zip(self.history["nll"], self.history["cumulative_nfe"]):
            if nll <= target:
                return float(nfe)
        return float("inf")


def train_cnf(mog: MogSpec, cfg: CnfConfig, keep_best: bool = False) -> CnfRun:
    """Maximum-likelihood fit with a fresh end time every iteration.

    Evaluation NLL is always computed at the sampler's deterministic end
    time (``t1 - b`` under the constrained shift).
    """
    rs = RngStream(cfg.seed)
    data = mog.sample(cfg.n_train, rs.split(1))
    held = mog.sample(cfg.n_eval, rs.split(3))
    oracle = float(-mog.logpdf(held).mean())
    net = Mlp.init([2, *cfg.hidden, 1], rs.split(0).gen)
    opt = Adam(net.params(), lr=cfg.lr)
    sampler = cfg.sampler()
    t_rng, b_rng = rs.split(2), rs.split(4)
    solver = cfg.solver()
    T_eval = sampler.eval_end_time()
    hist = {"iter": [], "nll": [], "cumulative_nfe": [], "t_end_mean": [], "train_nll": []}
    run = CnfRun(cfg, net, oracle, hist)
    cum_nfe = 0
    t_sum = 0.0
    best = (np.inf, net)
    try:
        for it in range(1, cfg.iters + 1):
            T = sample_end_time(sampler, t_rng)
            idx = b_rng.gen.integers(0, cfg.n_train, size=cfg.batch)
            loss, grads, nfe = nll_loss_grad(net, data[idx], cfg.t0, T, solver)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite NLL at iteration {it}")
            net = net.with_params(opt.step(grads))
            cum_nfe += nfe
            t_sum += T
            hist["train_nll"].append(loss)
            if it % cfg.eval_every == 0 or it == cfg.iters:
                nll = float(-np.mean(log_likelihood(net, held, cfg.t0, T_eval, solver)))
                hist["iter"].append(it)
                hist["nll"].append(nll)
                hist["cumulative_nfe"].append(cum_nfe)
                hist["t_end_mean"].append(t_sum / it)
                if nll < best[0]:
                    best = (nll, net)
    except (DivergenceError, FloatingPointError) as exc:
        log.warning("cnf run seed=%s stopped early: %s", cfg.seed, exc)
        run.status = "diverged"
    run.model = best[1] if keep_best else net
    return run


def forward_trajectories(net: Mlp, z_start, checkpoints, solver: SolverConfig | None = None):
    """States at each checkpoint, integrating forward from the first one. Shape (n_ckpt, B)."""
    solver = solver or SolverConfig(rtol=1e-7, atol=1e-9)
    checkpoints = np.asarray(checkpoints, dtype=np.float64)
    z = np.asarray(z_start, dtype=np.float64).reshape(-1, 1)
    out = [z[:, 0].copy()]
    f = lambda t, y: mlp_forward(net, y, t)
    for a, b in zip(checkpoints[:-1], checkpoints[1:]):
        z = dopri5_solve(f, z, a, b, solver).final_value
        out.append(z[:, 0].copy())
    return np.stack(out)


def export_trajectories(net: Mlp, z_grid, checkpoints, solver: SolverConfig | None = None):
    """Rows ``(sample_id, t, z)`` for every start and checkpoint."""
    traj = forward_trajectories(net, z_grid, checkpoints, solver)
    rows = []
    for i in range(traj.shape[1]):
        for k, t in enumerate(checkpoints):
            rows.append((i, float(t), float(traj[k, i])))
    return rows


def path_displacement(net: Mlp, z_start, t1: float, b: float,
                      solver: SolverConfig | None = None) -> float:
    """Mean ``|z(t1) - z(t1 - b)|`` of forward trajectories from ``z_start`` at t = 0."""
    traj = forward_trajectories(net, z_start, [0.0, t1 - b, t1], solver)
    return float(np.mean(np.abs(traj[2] - traj[1])))


def density_mass(net: Mlp, T: float, lo: float = -10.0, hi: float = 10.0, n: int = 2001,
                 solver: SolverConfig | None = None) -> float:
    """Trapezoid integral of the model density over ``[lo, hi]``."""
    x = np.linspace(lo, hi, n)
    p = np.exp(log_likelihood(net, x, 0.0, T, solver))
    return float(np.trapezoid(p, x))
