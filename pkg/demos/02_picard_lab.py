"""Picard iteration with a randomly perturbed upper limit.

Run: python3 demos/02_picard_lab.py
"""
import math

import numpy as np

from steerode import picard
from steerode.sampling import RngStream

decay = lambda t, x: -x

# %% With b = 0 the iterates are the Taylor polynomials of exp(-t).
seq = picard.picard_sequence(decay, 1.0, 0.0, 0.4, 0.0, 8)
for k in (1, 4, 8):
    phi = seq[k]
    taylor = sum((-phi.grid) ** j / math.factorial(j) for j in range(k + 1))
    print(f"k={k}: max |phi_k - taylor_k| = {np.max(np.abs(phi.values - taylor)):.2e}")

# %% Ratio of distances after one perturbed application, averaged over random pairs.
for b in (0.0, 0.1, 0.2):
    rep = picard.empirical_contraction(decay, 0.0, 0.0, b, 500, RngStream(0))
    print(f"b={b}: mean ratio {rep.mean_ratio:.3f} +- {rep.std_error:.3f}")

# %% Moving the base point away from zero makes the end-point mismatch dominate.
rep = picard.empirical_contraction(decay, 1.0, 0.0, 0.2, 500, RngStream(0))
print(f"z0=1, b=0.2: mean ratio {rep.mean_ratio:.3f} +- {rep.std_error:.3f} (M={rep.M:g})")

# %% |d2| - |d1| for independent uniform perturbations is triangular on [-b, b].
tri = picard.triangular_diff_stats(0.2, 200_000, RngStream(1), bins=10)
print(f"triangular: mean {tri.mean:.1e}, std {tri.std:.4f} (b/sqrt(6) = {0.2 / 6 ** 0.5:.4f})")
for lo, d, ref in zip(tri.edges[:-1], tri.density, tri.reference_density()):
    print(f"  [{lo:+.2f}, ..) empirical {d:5.2f}  reference {ref:5.2f}")
