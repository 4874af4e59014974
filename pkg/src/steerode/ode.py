"""Explicit initial-value solvers: fixed-step RK4 and adaptive Dormand-Prince 5(4).

Dynamics are callables ``f(t, z)``. States may be plain arrays or taped
:class:`~steerode.autodiff.Var` objects; in the latter case every accepted
stage is recorded and rejected attempts are truncated off the tape, so
``backward`` differentiates exactly the arithmetic of the accepted steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Mlp, Tape, Var, backward, mlp_forward, param_grads
from .errors import ConfigError, DivergenceError

# Dormand & Prince (1980) tableau
C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
B5 = A[6] + (0.0,)
# fifth-order minus embedded fourth-order weights
E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
PI_BETA = 0.04
PI_ALPHA = 0.2 - 0.75 * PI_BETA


@dataclass(frozen=True)
class SolverConfig:
    method: str = "dopri5"
    rtol: float = 1e-5
    atol: float = 1e-7
    initial_step: float | None = None
    max_steps: int = 100_000
    n_steps: int = 10

    def __post_init__(self):
        if self.method not in ("rk4", "dopri5"):
            raise ConfigError(f"unknown solver method {self.method!r}", key="method")
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError("rtol and atol must be positive", key="rtol")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1", key="max_steps")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1", key="n_steps")
        if self.initial_step is not None and self.initial_step <= 0:
            raise ConfigError("initial_step must be positive", key="initial_step")


@dataclass
class SolveResult:
    final: object
    trajectory: list = field(default_factory=list)
    nfe: int = 0
    accepted: int = 0
    rejected: int = 0
    steps: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def final_value(self) -> np.ndarray:
        return _val(self.final)


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _combine(y, h, coeffs, ks):
    acc = None
    for a, k in zip(coeffs, ks):
        if a == 0.0:
            continue
        term = a * k
        acc = term if acc is None else acc + term
    return y if acc is None else y + h * acc


def _as_state(z0, tape):
    if isinstance(z0, Var) or tape is None:
        return z0 if isinstance(z0, Var) else np.asarray(z0, dtype=np.float64)
    return tape.leaf(z0)


def rk4_solve(f: Callable, z0, t0: float, t1: float, n_steps: int,
              tape: Tape | None = None) -> SolveResult:
    """Classical fourth-order Runge-Kutta with ``n_steps`` equal steps (``t1 < t0`` allowed)."""
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1", key="n_steps")
    y = _as_state(z0, tape)
    h = (t1 - t0) / n_steps
    res = SolveResult(final=y, trajectory=[(t0, _val(y).copy())])
    for i in range(n_steps):
        t = t0 + i * h
        k1 = f(t, y)
        k2 = f(t + h / 2, y + (h / 2) * k1)
        k3 = f(t + h / 2, y + (h / 2) * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        res.nfe += 4
        if not np.all(np.isfinite(_val(y))):
            raise DivergenceError(f"non-finite state at RK4 step {i}", t=t, h=h, step=i)
        res.trajectory.append((t0 + (i + 1) * h, _val(y).copy()))
        res.steps.append(h)
    res.accepted = n_steps
    res.final = y
    return res


def _dopri_stages(f, t, y, h, k1):
    ks = [k1]
    for i in range(1, 7):
        ks.append(f(t + C[i] * h, _combine(y, h, A[i], ks)))
    # A[6] == B5 so the last stage input is the fifth-order solution
    y5 = _combine(y, h, A[6], ks[:6])
    err = h * sum(e * _val(k) for e, k in zip(E, ks) if e != 0.0)
    return ks, y5, err


def _initial_step(y, k1, span, cfg):
    if cfg.initial_step is not None:
        return min(cfg.initial_step, span)
    yv, fv = _val(y), _val(k1)
    scale = cfg.atol + cfg.rtol * np.abs(yv)
    d0 = float(np.max(np.abs(yv) / scale)) if yv.size else 0.0
    d1 = float(np.max(np.abs(fv) / scale)) if fv.size else 0.0
    if d1 == 0.0:
        return span
    if d0 < 1e-5 or d1 < 1e-5:
        return min(1e-6, span)
    return min(0.01 * d0 / d1, span)


def dopri5_solve(f: Callable, z0, t0: float, T: float, cfg: SolverConfig | None = None,
                 tape: Tape | None = None) -> SolveResult:
    """Adaptive Dormand-Prince 5(4) from ``t0`` to ``T`` (either direction).

    Accepted steps satisfy ``|err_i| <= atol + rtol * max(|y_i|, |y_new_i|)``
    for every component. With first-same-as-last reuse the evaluation count
    is exactly ``6 * (accepted + rejected) + 1``.
    """
    cfg = cfg or SolverConfig()
    y = _as_state(z0, tape)
    if tape is None and isinstance(y, Var):
        tape = y.tape
    res = SolveResult(final=y, trajectory=[(t0, _val(y).copy())])
    span = abs(T - t0)
    if span == 0.0:
        return res
    direction = 1.0 if T > t0 else -1.0
    k1 = f(t0, y)
    res.nfe = 1
    h = _initial_step(y, k1, span, cfg)
    t = t0
    err_prev = 1e-4
    while True:
        if res.accepted + res.rejected >= cfg.max_steps:
            raise DivergenceError(
                f"max_steps={cfg.max_steps} exceeded at t={t:.6g} with h={h:.3g}",
                t=t, h=h, step=res.accepted + res.rejected)
        remaining = abs(T - t)
        last = h >= remaining
        if last:
            h = remaining
        mark = tape.mark() if tape is not None else None
        ks, y5, err_vec = _dopri_stages(f, t, y, direction * h, k1)
        res.nfe += 6
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(_val(y)), np.abs(_val(y5)))
        ratio = np.abs(err_vec) / scale
        err = float(np.max(ratio)) if ratio.size else 0.0
        if not np.isfinite(err):
            res.rejected += 1
            if tape is not None:
                tape.truncate(mark)
            h *= MIN_FACTOR
            if h < 1e-14 * max(1.0, abs(t)):
                raise DivergenceError(f"step size underflow at t={t:.6g}", t=t, h=h)
            continue
        if err <= 1.0:
            t = T if last else t + direction * h
            y, k1 = y5, ks[6]
            res.accepted += 1
            res.steps.append(direction * h)
            res.errors.append(err)
            res.trajectory.append((t, _val(y).copy()))
            if last:
                break
            if err == 0.0:
                fac = MAX_FACTOR
            else:
                fac = SAFETY * err ** -PI_ALPHA * err_prev ** PI_BETA
            err_prev = max(err, 1e-4)
            h *= min(MAX_FACTOR, max(MIN_FACTOR, fac))
        else:
            res.rejected += 1
            if tape is not None:
                tape.truncate(mark)
            h *= min(1.0, max(MIN_FACTOR, SAFETY * err ** -PI_ALPHA))
    res.final = y
    return res


def replay_dopri5(f: Callable, z0, t0: float, steps: Sequence[float],
                  tape: Tape | None = None) -> SolveResult:
    """Dormand-Prince stages on a frozen list of signed step sizes, no control."""
    y = _as_state(z0, tape)
    res = SolveResult(final=y, trajectory=[(t0, _val(y).copy())])
    t = t0
    k1 = f(t, y)
    res.nfe = 1
    for h in steps:
        ks, y, _ = _dopri_stages(f, t, y, h, k1)
        k1 = ks[6]
        t += h
        res.nfe += 6
        res.accepted += 1
        res.steps.append(h)
        res.trajectory.append((t, _val(y).copy()))
    res.final = y
    return res


def solve(f: Callable, z0, t0: float, t1: float, cfg: SolverConfig | None = None,
          tape: Tape | None = None) -> SolveResult:
    cfg = cfg or SolverConfig()
    if cfg.method == "rk4":
        return rk4_solve(f, z0, t0, t1, cfg.n_steps, tape)
    return dopri5_solve(f, z0, t0, t1, cfg, tape)


def interpolate(result: SolveResult, times) -> np.ndarray:
    """Linear (first-order) dense output between accepted steps."""
    ts = np.array([t for t, _ in result.trajectory])
    ys = np.stack([y for _, y in result.trajectory])
    order = np.argsort(ts)
    ts, ys = ts[order], ys[order]
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    flat = ys.reshape(len(ts), -1)
    out = np.stack([np.interp(times, ts, flat[:, j]) for j in range(flat.shape[1])], axis=-1)
    return out.reshape((len(times),) + ys.shape[1:])


def net_dynamics(net: Mlp, tape: Tape | None = None) -> Callable:
    return lambda t, z: mlp_forward(net, z, t, tape)


def solve_loss_grad(net: Mlp, z0, t0: float, T: float, cfg: SolverConfig | None,
                    loss: Callable):
    """Loss of the final state and its gradient with respect to every net parameter.

    Gradients are discretize-then-optimize: the adaptive controller's
    accepted-step schedule is treated as fixed.
    """
    tape = Tape()
    res = solve(net_dynamics(net, tape), np.asarray(z0, dtype=np.float64), t0, T, cfg, tape)
    out = loss(res.final)
    if not isinstance(out, Var):
        # final state independent of every parameter
        return float(out), [np.zeros_like(p) for p in net.params()]
    grads = param_grads(tape, backward(tape, out), net.params())
    return float(out.value), grads
