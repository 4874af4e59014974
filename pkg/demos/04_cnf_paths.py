"""A 1D flow on a two-component mixture, with and without random end times.

Run: python3 demos/04_cnf_paths.py   (about 2 min)
"""
import numpy as np

from steerode.cnf1d import (CnfConfig, MogSpec, density_mass, forward_trajectories,
                            path_displacement, train_cnf)
from steerode.report import emit_svg

mog = MogSpec()
z = np.random.default_rng(0).standard_normal(1000)

# %% Train with a fixed end time and with T ~ U(0.25, 1.0).
for b in (0.0, 0.375):
    run = train_cnf(mog, CnfConfig(b=b, seed=0))
    T = run.config.sampler().eval_end_time()
    print(f"b={b}: NLL {run.final_nll:.4f} (oracle {run.oracle_nll:.4f}), "
          f"density mass {density_mass(run.model, T):.4f}, "
          f"mean |z(1) - z(0.625)| {path_displacement(run.model, z, 1.0, 0.375):.4f}")
    ts = np.linspace(0, 1, 21)
    traj = forward_trajectories(run.model, z[:8], ts)
    emit_svg([(f"z{i}", list(zip(ts, traj[:, i]))) for i in range(8)],
             f"cnf_paths_b{b}.svg", title=f"flow paths b={b}", xlabel="t", ylabel="z")
