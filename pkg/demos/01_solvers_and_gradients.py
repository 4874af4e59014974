"""Solvers, evaluation counts and gradients through a solve.

Run: python3 demos/01_solvers_and_gradients.py
"""
import numpy as np

from steerode.autodiff import Mlp
from steerode.cli import GradcheckConfig, gradcheck_errors
from steerode.ode import SolverConfig, dopri5_solve, rk4_solve

# %% dz/dt = -z from z(0) = 1. RK4 costs four evaluations per step.
decay = lambda t, z: -z
for n in (4, 8, 16):
    res = rk4_solve(decay, np.array([1.0]), 0.0, 1.0, n)
    print(f"rk4 n={n:2d} nfe={res.nfe:3d} error={abs(res.final_value[0] - np.exp(-1)):.2e}")

# %% Dormand-Prince reuses its last stage, so nfe = 6 (accepted + rejected) + 1.
for tol in (1e-3, 1e-6, 1e-9):
    res = dopri5_solve(decay, np.array([1.0]), 0.0, 1.0, SolverConfig(rtol=tol, atol=tol))
    print(f"dopri5 tol={tol:.0e} steps={res.accepted}+{res.rejected} nfe={res.nfe} "
          f"error={abs(res.final_value[0] - np.exp(-1)):.2e}")

# %% A stiff right-hand side forces many small steps.
stiff = lambda t, y: -1000 * y + 3000 - 2000 * np.exp(-t)
res = dopri5_solve(stiff, np.array([0.0]), 0.0, 1.0)
print(f"stiff r=1000 over [0, 1]: {res.accepted} accepted, {res.rejected} rejected, "
      f"nfe={res.nfe}")

# %% Gradients through the solver agree with central differences.
for name, err in gradcheck_errors(GradcheckConfig()).items():
    print(f"gradient check through {name}: max relative error {err:.1e}")
