"""Rough drift from one disorder sample, and the fugacities it induces."""

import numpy as np

from sinai_zrp.environment import quenched_drift, w_prime_eps
from sinai_zrp.invariant_measure import solve_fugacities, stationarity_residual

# one quenched sample, refined in N; the disorder prefix is shared
for N in (64, 512, 4096, 32768):
    env = quenched_drift(7, "rademacher", N, 0.1)
    prof = solve_fugacities(env)
    res = np.max(np.abs(stationarity_residual(prof.phi, env)))
    print(f"N={N:6d}  C={env.sup_scaled:6.3f}  max/min phi={prof.max_min_ratio:7.3f}  "
          f"N max|dphi|={prof.max_increment_times_N:7.3f}  residual={res:.1e}")

# the limiting drift seen by the PDE
env = quenched_drift(7, "rademacher", 4096, 0.1)
x = np.linspace(0, 1, 11)
print("W'_eps on a coarse grid:", np.round(w_prime_eps(env.walk, 0.1, x), 3))
