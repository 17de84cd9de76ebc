"""Canonical blocks: equivalence of ensembles and localized spectral gaps."""

import numpy as np

from sinai_zrp.blocks import CanonicalBlock, build_block_generator, canonical_expectation, spectral_gap
from sinai_zrp.environment import DriftField, quenched_drift
from sinai_zrp.invariant_measure import phi_of_rho, solve_fugacities
from sinai_zrp.rates import preset

g = preset("kplusmin5")
target = phi_of_rho(g, 1.0)[0]
for l in (2, 4, 8, 16):
    n = 2 * l + 1
    v = canonical_expectation(CanonicalBlock(np.ones(n), n, g), l)
    print(f"l={l:2d}  canonical E[g]={v:.6f}  Phi(1)={target:.6f}  gap={abs(v - target):.2e}")

# the rough environment flattens out inside a block of fixed size as N grows
lin = preset("linear")
for N in (64, 512, 4096):
    env = quenched_drift(7, "rademacher", N, 0.1)
    hom = DriftField.zero(N)
    k = int(0.3 * N)
    a = spectral_gap(build_block_generator(env, solve_fugacities(env), lin, 2, k, 2))
    b = spectral_gap(build_block_generator(hom, solve_fugacities(hom), lin, 2, k, 2))
    print(f"N={N:5d}  gap rough/flat = {a / b:.5f}")
