"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The stiff and flow criteria train real models and take about an hour on
one core. Select them with ``-k`` or run the whole file.
"""
import filecmp
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from steerode import picard
from steerode.autodiff import Mlp
from steerode.cli import GradcheckConfig, gradcheck_errors, main
from steerode.cnf1d import (CnfConfig, MogSpec, density_mass, log_likelihood, path_displacement,
                            std_normal_logpdf, train_cnf)
from steerode.ode import SolverConfig, dopri5_solve, rk4_solve
from steerode.sampling import RngStream
from steerode.stiff import TrainConfig, sweep

SEEDS = (0, 1, 2, 3, 4)
STIFF_BASE = TrainConfig(r=1000.0, eval_every=20)
RESULTS = {}


def report(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return ok


def _median(records, attr="min_test_mse"):
    return float(np.median([getattr(r, attr) for r in records]))


@pytest.fixture(scope="session")
def stiff_runs():
    """Every stiff cell used by the stiff criteria, trained once."""
    cache = {}

    def get(key, **kw):
        if key not in cache:
            start = time.perf_counter()
            recs = sweep(STIFF_BASE, {k: [v] for k, v in kw.items()}, seeds=SEEDS)
            cache[key] = (recs, time.perf_counter() - start)
        return cache[key]

    return get


def test_criterion_01_stiff_headline(stiff_runs):
    van, t_van = stiff_runs("b0", sampler="uniform", b=0.0)
    st, t_st = stiff_runs("b0.124", sampler="uniform", b=0.124)
    m_van, m_st = _median(van), _median(st)
    gap = _median(van, "final_gap")
    wall = t_van + t_st
    ok = m_van >= 3.0 * m_st and gap > 0.5 and wall <= 900.0
    assert report(1, ok, f"median min MSE vanilla={m_van:.4g} steer={m_st:.4g} "
                         f"ratio={m_van / m_st:.3g} (need >= 3); vanilla final gap={gap:.3g} "
                         f"(need > 0.5); wall={wall:.0f}s (need <= 900)")


def test_criterion_02_b_sweep_trend(stiff_runs):
    bs = (0.025, 0.065, 0.124)
    med = [_median(stiff_runs(f"b{b}", sampler="uniform", b=b)[0]) for b in bs]
    inversions = sum(1 for a, b in zip(med, med[1:]) if b >= a)
    ok = med[2] < med[0] and inversions <= 1
    assert report(2, ok, "medians " + ", ".join(f"b={b}: {m:.4g}" for b, m in zip(bs, med)) +
                  f"; inversions={inversions}")


def test_criterion_03_gaussian_variant(stiff_runs):
    wide = _median(stiff_runs("g0.124", sampler="gaussian", std=0.124)[0])
    narrow = _median(stiff_runs("g0.01", sampler="gaussian", std=0.01)[0])
    assert report(3, wide < narrow, f"median min MSE std=0.124: {wide:.4g}, "
                                    f"std=0.01: {narrow:.4g}")


def test_criterion_04_contraction_and_triangular():
    rep = picard.empirical_contraction(lambda t, x: -x, 0.0, 0.0, 0.2, 1000, RngStream(0),
                                       a=0.4, c=1.0)
    tri = picard.triangular_diff_stats(0.2, 1_000_000, RngStream(1))
    tri_ok = abs(tri.mean) <= 3 * tri.std / math.sqrt(tri.n)
    ok = rep.within_bound(3.0) and tri_ok
    assert report(4, ok, f"mean ratio={rep.mean_ratio:.4f} SE={rep.std_error:.4f} "
                         f"(bound 0.5+3SE={0.5 + 3 * rep.std_error:.4f}); triangular "
                         f"mean={tri.mean:.2e} limit={3 * tri.std / math.sqrt(tri.n):.2e}")


def test_criterion_05_classical_picard_taylor():
    decay = lambda t, x: -x
    fine = picard.picard_sequence(decay, 1.0, 0.0, 0.4, 0.0, 8, resolution=1e-3)[-1]
    coarse = picard.picard_sequence(decay, 1.0, 0.0, 0.4, 0.0, 8, resolution=2e-3)[-1]
    qerr = float(np.max(np.abs(fine.values[::2] - coarse.values))) / 3.0
    taylor = sum((-fine.grid) ** k / math.factorial(k) for k in range(9))
    err = float(np.max(np.abs(fine.values - taylor)))
    assert report(5, err <= 10 * qerr, f"max |phi_8 - taylor_8|={err:.3e}, "
                                       f"quadrature error={qerr:.3e}")


def test_criterion_06_gradient_correctness():
    errs = gradcheck_errors(GradcheckConfig(dim=2, hidden=16, n_steps=4, seed=0))
    ok = errs["rk4"] <= 1e-4 and errs["dopri5_frozen"] <= 1e-3
    assert report(6, ok, f"rk4 max rel err={errs['rk4']:.2e} (<= 1e-4); dopri5 frozen="
                         f"{errs['dopri5_frozen']:.2e} (<= 1e-3)")


def test_criterion_07_solver_accounting():
    decay = lambda t, z: -z
    rk_ok = all(rk4_solve(decay, np.array([1.0]), 0.0, 1.0, n).nfe == 4 * n
                for n in (1, 3, 10, 64))
    res = dopri5_solve(decay, np.array([1.0]), 0.0, 1.0, SolverConfig(rtol=1e-6, atol=1e-6))
    stiff = dopri5_solve(lambda t, y: -1000 * y + 3000 - 2000 * np.exp(-t), np.array([0.0]),
                         0.0, 1.0, SolverConfig(initial_step=0.1))
    fsal_ok = all(r.nfe == 6 * (r.accepted + r.rejected) + 1 for r in (res, stiff))
    err = abs(res.final_value[0] - math.exp(-1))
    ok = rk_ok and fsal_ok and stiff.rejected > 0 and err <= 1e-5
    assert report(7, ok, f"rk4 nfe==4n: {rk_ok}; dopri5 nfe==6(acc+rej)+1: {fsal_ok} "
                         f"(stiff run rejected {stiff.rejected}); |z(1)-e^-1|={err:.2e}")


@pytest.fixture(scope="session")
def cnf_runs():
    runs = {}
    for b in (0.0, 0.375):
        runs[b] = [train_cnf(MogSpec(), CnfConfig(b=b, seed=s)) for s in SEEDS]
    return runs


def test_criterion_08_cnf_exactness(cnf_runs):
    x = np.linspace(-4, 4, 41)
    zero = float(np.max(np.abs(log_likelihood(Mlp.zeros([2, 8, 1]), x, 0.0, 1.0)
                               - std_normal_logpdf(x))))
    a, T = 0.7, 1.0
    lin = Mlp([np.array([[a], [0.0]])], [np.zeros(1)])
    exact = std_normal_logpdf(x * np.exp(-a * T)) - a * T
    lin_err = float(np.max(np.abs(log_likelihood(lin, x, 0.0, T,
                                                 SolverConfig(rtol=1e-10, atol=1e-12)) - exact)))
    run = cnf_runs[0.0][0]
    mass = density_mass(run.model, run.config.sampler().eval_end_time())
    ok = zero <= 1e-12 and lin_err <= 1e-6 and abs(mass - 1.0) <= 0.01
    assert report(8, ok, f"zero net err={zero:.1e}; linear flow err={lin_err:.1e}; "
                         f"trained density mass={mass:.5f}")


def test_criterion_09_path_shortening(cnf_runs):
    z = RngStream(99).gen.standard_normal(2000)
    stats = {}
    for b, runs in cnf_runs.items():
        stats[b] = dict(
            disp=[path_displacement(r.model, z, 1.0, 0.375) for r in runs],
            gap=[r.final_nll - r.oracle_nll for r in runs],
            nfe=[r.nfe_to_threshold() for r in runs],
        )
    matched = all(g <= 0.15 for s in stats.values() for g in s["gap"])
    d_van, d_st = (float(np.median(stats[b]["disp"])) for b in (0.0, 0.375))
    n_van, n_st = (float(np.median(stats[b]["nfe"])) for b in (0.0, 0.375))
    ok = matched and d_st < d_van and n_st <= n_van
    assert report(9, ok, f"median displacement steer={d_st:.4f} vanilla={d_van:.4f}; "
                         f"NLL gaps within 0.15: {matched} (max "
                         f"{max(max(s['gap']) for s in stats.values()):.3f}); median NFE to "
                         f"threshold steer={n_st:.0f} vanilla={n_van:.0f}")


DETERMINISM = {
    "stiff": ["--hidden", "16", "--epochs", "3", "--n_train", "32", "--n_grid", "201",
              "--test_hi", "2.0", "--b", "0.124"],
    "sweep": ["--hidden", "8", "--epochs", "2", "--n_train", "16", "--n_grid", "101",
              "--test_hi", "1.0", "--grid", "b=0,0.124", "--seeds", "0,1"],
    "picard": ["--trials", "200", "--tri_n", "20000"],
    "cnf1d": ["--iters", "10", "--eval_every", "5", "--b", "0.375", "--n_eval", "500"],
    "gradcheck": [],
}


def test_criterion_10_determinism(tmp_path):
    bad = []
    for sub, extra in DETERMINISM.items():
        dirs = [tmp_path / sub / k for k in ("a", "b")]
        codes = [main([sub, "--seed", "5", "--out", str(d), *extra]) for d in dirs]
        csvs = sorted(p.name for p in dirs[0].glob("*.csv"))
        same = bool(csvs) and all(
            filecmp.cmp(dirs[0] / n, dirs[1] / n, shallow=False) for n in csvs)
        if codes != [0, 0] or not same:
            bad.append(sub)
    assert report(10, not bad, "byte-identical CSVs for " + ", ".join(DETERMINISM) +
                  (f"; mismatched: {bad}" if bad else ""))
