"""Sinai walk slowdown and the Brox diffusion limit of the scaled walk."""

import math

import numpy as np

from sinai_zrp import brox
from sinai_zrp.environment import DisorderLaw, gen_disorder

# averaged over environments, |U_n| grows like (log n)^2
law = DisorderLaw()
for n in (1000, 10_000, 100_000):
    x = np.array([brox.sinai_walk(brox.SiteEnvironment(s, law, 0.4), n, s + 999, record_every=n)[-1]
                  for s in range(200)])
    m = np.median(np.abs(x))
    print(f"n={n:6d}  median|U_n|={m:7.1f}  /(log n)^2={m / math.log(n) ** 2:.3f}  /sqrt n={m / math.sqrt(n):.3f}")

# the scaled walk against Brox in the same potential
d = gen_disorder(7, 16)
tab = brox.compare_seignourel_brox(d, (100, 1000), 1.0, 1000, 7)
for N, ks in zip(tab["N"], tab["ks"]):
    print(f"N={N:5d}  KS(walk, Brox) = {ks:.4f}")
