"""Command-line driver.

    steerode stiff    [--config FILE] [--seed N] [--out DIR] [--KEY VALUE ...]
    steerode sweep    --grid "b=0,0.124" --seeds 0,1,2 [--workers N] ...
    steerode picard   ...
    steerode cnf1d    ...
    steerode gradcheck ...

Values come from the dataclass defaults, then the config file, then flags.
Exit codes: 0 success, 1 configuration error, 2 runtime failure.
The output directory defaults to ``$STEERODE_OUT`` or ``./steerode_out``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import cnf1d, picard, stiff
from .autodiff import Mlp, mlp_forward
from .errors import ConfigError, SteerError
from .ode import SolverConfig, dopri5_solve, replay_dopri5, rk4_solve
from .report import (CsvWriter, convert, dataclass_defaults, emit_svg, load_config,
                     unknown_key_error, write_csv)
from .sampling import RngStream

DEFAULT_SEED = 0
OUT_ENV = "STEERODE_OUT"
SUBCOMMANDS = ("stiff", "sweep", "picard", "cnf1d", "gradcheck")

log = logging.getLogger("steerode")


@dataclass
class PicardConfig:
    a: float = 0.4
    b: float = 0.2
    trials: int = 1000
    z0: float = 0.0
    c: float = 1.0
    tri_n: int = 1_000_000
    bins: int = 50
    iters: int = 8
    resolution: float = 1e-3
    seed: int = 0


@dataclass
class GradcheckConfig:
    dim: int = 2
    hidden: int = 16
    batch: int = 3
    t1: float = 1.0
    n_steps: int = 4
    eps: float = 1e-5
    rtol: float = 1e-4
    atol: float = 1e-6
    seed: int = 0


@dataclass
class SweepConfig(stiff.TrainConfig):
    grid: str = "b=0,0.124"
    seeds: str = "0"


EXPERIMENTS = {
    "stiff": stiff.TrainConfig,
    "sweep": SweepConfig,
    "picard": PicardConfig,
    "cnf1d": cnf1d.CnfConfig,
    "gradcheck": GradcheckConfig,
}


@dataclass
class RunConfig:
    subcommand: str
    config_path: str | None
    seed: int
    out: Path
    workers: int


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, key="argv")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="steerode", description="stochastic end-time experiments")
    sub = p.add_subparsers(dest="subcommand", parser_class=_Parser)
    for name, cls in EXPERIMENTS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="flat key = value file")
        sp.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV})")
        sp.add_argument("--workers", type=int, default=1)
        for f in fields(cls):
            sp.add_argument(f"--{f.name}", dest=f"opt_{f.name}", default=None, metavar="V")
    return p


def resolve(argv) -> tuple[RunConfig, object]:
    """Parse ``argv`` into the run settings and the effective experiment config."""
    args = build_parser().parse_args(argv)
    if args.subcommand is None:
        raise ConfigError("missing subcommand; choose one of " + ", ".join(SUBCOMMANDS),
                          key="subcommand")
    cls = EXPERIMENTS[args.subcommand]
    defaults = dataclass_defaults(cls)
    defaults["seed"] = DEFAULT_SEED
    values = load_config(args.config, defaults)
    for key, like in defaults.items():
        text = getattr(args, f"opt_{key}")
        if text is not None:
            values[key] = convert(key, text, like)
    try:
        cfg = cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc), key="config") from None
    out = Path(args.out or os.environ.get(OUT_ENV) or "steerode_out")
    if args.workers < 1:
        raise ConfigError("workers must be >= 1", key="workers")
    rc = RunConfig(args.subcommand, args.config, int(values["seed"]), out, args.workers)
    return rc, cfg


def meta_of(rc: RunConfig, cfg) -> dict:
    meta = {"subcommand": rc.subcommand}
    meta.update({f.name: getattr(cfg, f.name) for f in fields(cfg)})
    return meta


def run_stiff(rc: RunConfig, cfg: stiff.TrainConfig) -> int:
    meta = meta_of(rc, cfg)
    rec, _ = stiff.train(cfg)
    write_csv(rc.out / "stiff_run.csv", stiff.CSV_FIELDS, [rec.row()], meta)
    ev = rec.history.get("best_eval")
    rows = [] if ev is None else zip(ev.times, ev.y_true, ev.y_pred)
    write_csv(rc.out / "stiff_trajectory.csv", ("t", "y_true", "y_pred"), rows, meta)
    h = rec.history
    write_csv(rc.out / "stiff_history.csv", ("epoch", "test_mse"),
              zip(h["eval_epoch"], h["test_mse"]), meta)
    if ev is not None:
        step = max(1, len(ev.times) // 500)
        emit_svg([("true", list(zip(ev.times[::step], ev.y_true[::step]))),
                  ("predicted", list(zip(ev.times[::step], ev.y_pred[::step])))],
                 rc.out / "stiff_trajectory.svg", title=f"stiff r={cfg.r:g} b={cfg.b:g}",
                 xlabel="t", ylabel="y", meta=meta)
    print(f"min_test_mse={rec.min_test_mse:.6g} final_gap={rec.final_gap:.4g} "
          f"total_nfe={rec.total_nfe} status={rec.status}")
    return 0 if rec.status == "ok" else 2


def parse_grid(text: str) -> dict[str, list]:
    grid = {}
    defaults = dataclass_defaults(stiff.TrainConfig)
    for part in filter(None, (p.strip() for p in text.split(";"))):
        if "=" not in part:
            raise ConfigError(f"bad grid entry {part!r}; expected key=v1,v2", key="grid")
        key, vals = (s.strip() for s in part.split("=", 1))
        if key not in defaults:
            raise unknown_key_error(key, defaults)
        grid[key] = [convert(key, v.strip(), defaults[key]) for v in vals.split(",") if v.strip()]
    if not grid:
        raise ConfigError("sweep grid is empty", key="grid")
    return grid


def run_sweep(rc: RunConfig, cfg: SweepConfig) -> int:
    grid = parse_grid(cfg.grid)
    try:
        seeds = [int(s) for s in cfg.seeds.replace(" ", "").split(",") if s]
    except ValueError:
        raise ConfigError(f"bad seeds {cfg.seeds!r}", key="seeds") from None
    base = stiff.TrainConfig(**{f.name: getattr(cfg, f.name) for f in fields(stiff.TrainConfig)})
    cells = stiff.expand_grid(base, grid, seeds)
    meta = meta_of(rc, cfg)
    failed = 0
    with CsvWriter(rc.out / "sweep.csv", stiff.CSV_FIELDS, meta) as w:
        if rc.workers > 1:
            from concurrent.futures import ProcessPoolExecutor

            pool = ProcessPoolExecutor(max_workers=rc.workers)
            results = pool.map(stiff._run_cell, cells)
        else:
            pool, results = None, map(stiff._run_cell, cells)
        try:
            for rec in results:
                w.write(rec.row())
                failed += rec.status != "ok"
                print(f"seed={rec.config.seed} " +
                      " ".join(f"{k}={getattr(rec.config, k)}" for k in grid) +
                      f" min_test_mse={rec.min_test_mse:.6g}")
        finally:
            if pool is not None:
                pool.shutdown()
    return 0 if failed == 0 else 2


def run_picard(rc: RunConfig, cfg: PicardConfig) -> int:
    meta = meta_of(rc, cfg)
    rs = RngStream(cfg.seed)
    f = lambda t, x: -x
    rep = picard.empirical_contraction(f, cfg.z0, 0.0, cfg.b, cfg.trials, rs.split(0),
                                       a=cfg.a, c=cfg.c, resolution=cfg.resolution)
    write_csv(rc.out / "picard_contraction.csv", ("trial", "num", "den", "ratio"),
              zip(range(rep.n_trials), rep.num, rep.den, rep.ratios), meta)
    tri = picard.triangular_diff_stats(cfg.b, cfg.tri_n, rs.split(1), bins=cfg.bins)
    ref = tri.reference_density()
    write_csv(rc.out / "picard_triangular.csv", ("bin_lo", "bin_hi", "count", "density",
                                                 "reference_density"),
              zip(tri.edges[:-1], tri.edges[1:], tri.counts, tri.density, ref), meta)
    seq = picard.picard_sequence(f, 1.0, 0.0, cfg.a, cfg.b, cfg.iters, rs.split(2),
                                 cfg.resolution)
    deltas = picard.successive_deltas(seq)
    write_csv(rc.out / "picard_iterates.csv", ("k", "delta_to_previous"),
              zip(range(1, len(seq)), deltas), meta)
    print(f"mean_ratio={rep.mean_ratio:.6g} se={rep.std_error:.3g} L={rep.L:.4g} "
          f"M={rep.M:.4g} within_bound={rep.within_bound()}")
    print(f"triangular mean={tri.mean:.3e} std={tri.std:.6g}")
    return 0


def run_cnf(rc: RunConfig, cfg: cnf1d.CnfConfig) -> int:
    meta = meta_of(rc, cfg)
    meta["mog"] = cnf1d.MogSpec().label
    run = cnf1d.train_cnf(cnf1d.MogSpec(), cfg)
    h = run.history
    write_csv(rc.out / "cnf_history.csv", ("epoch", "nll", "cumulative_nfe", "t_end_mean"),
              zip(h["iter"], h["nll"], h["cumulative_nfe"], h["t_end_mean"]), meta)
    z = RngStream(cfg.seed).split(5).gen.standard_normal(64)
    ckpts = np.linspace(cfg.t0, cfg.t1, 9)
    rows = cnf1d.export_trajectories(run.model, z, ckpts)
    write_csv(rc.out / "cnf_trajectories.csv", ("sample_id", "t", "z"), rows, meta)
    traj = np.array([r[2] for r in rows]).reshape(len(z), len(ckpts))
    emit_svg([(f"z{i}", list(zip(ckpts, traj[i]))) for i in range(0, len(z), 8)],
             rc.out / "cnf_trajectories.svg", title=f"flow paths b={cfg.b:g}",
             xlabel="t", ylabel="z", meta=meta)
    print(f"final_nll={run.final_nll:.5g} oracle_nll={run.oracle_nll:.5g} "
          f"nfe_to_threshold={run.nfe_to_threshold():g} status={run.status}")
    return 0 if run.status == "ok" else 2


def gradcheck_errors(cfg: GradcheckConfig) -> dict[str, float]:
    """Max relative error of tape gradients through RK4 and a frozen dopri5 schedule."""
    from .autodiff import grad_check

    rs = RngStream(cfg.seed)
    net = Mlp.init([cfg.dim + 1, cfg.hidden, cfg.dim], rs.split(0).gen)
    z0 = rs.split(1).gen.standard_normal((cfg.batch, cfg.dim))
    target = rs.split(2).gen.standard_normal((cfg.batch, cfg.dim))

    def quad(final, tape):
        d = final - target
        return (d * d).sum() if tape is not None else float(np.sum(d * d))

    def rk4_loss(n, tape):
        f = lambda t, z: mlp_forward(n, z, t, tape)
        return quad(rk4_solve(f, z0, 0.0, cfg.t1, cfg.n_steps, tape).final, tape)

    sched = dopri5_solve(lambda t, z: mlp_forward(net, z, t), z0, 0.0, cfg.t1,
                         SolverConfig(rtol=cfg.rtol, atol=cfg.atol)).steps

    def dopri_loss(n, tape):
        f = lambda t, z: mlp_forward(n, z, t, tape)
        return quad(replay_dopri5(f, z0, 0.0, sched, tape).final, tape)

    return {"rk4": grad_check(net, rk4_loss, cfg.eps),
            "dopri5_frozen": grad_check(net, dopri_loss, cfg.eps)}


def run_gradcheck(rc: RunConfig, cfg: GradcheckConfig) -> int:
    errs = gradcheck_errors(cfg)
    write_csv(rc.out / "gradcheck.csv", ("solver", "max_rel_err"), errs.items(),
              meta_of(rc, cfg))
    for k, v in errs.items():
        print(f"{k} max_rel_err={v:.3e}")
    return 0


RUNNERS = {"stiff": run_stiff, "sweep": run_sweep, "picard": run_picard,
           "cnf1d": run_cnf, "gradcheck": run_gradcheck}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        rc, cfg = resolve(sys.argv[1:] if argv is None else argv)
        rc.out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return 2
    try:
        return RUNNERS[rc.subcommand](rc, cfg)
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return 1
    except (SteerError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
