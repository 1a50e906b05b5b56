"""M/M/infinity started empty: simulated counts against Poisson(1 - e^-t).

With unit arrival and service rates the number in system at time t is Poisson
with mean 1 - exp(-t).  Both engine modes are compared with that law.
"""

import math

from sevastyanov import arrivals as ar
from sevastyanov import service_dist as sd
from sevastyanov.engine import EMPTY, Models
from sevastyanov.estimators import empirical_pmf, marginal_counts_grid, tv_counts, tv_noise_floor
from sevastyanov.stationary import count_pmf

REPS = 20000
models = Models(sd.constant_rate(1.0), ar.constant(1.0))
grid = [0.5, 1.0, 2.0, 5.0]

for mode, seed in (("residual", 1), ("thinning", 2)):
    counts = marginal_counts_grid(grid, EMPTY, models, REPS, seed, mode)
    print(f"{mode}:")
    for j, t in enumerate(grid):
        exact = count_pmf(ar.constant(1 - math.exp(-t)), 1.0).p
        tv = tv_counts(empirical_pmf(counts[:, j]), exact)
        print(f"  t={t:<4} mean={counts[:, j].mean():.4f} (exact {1 - math.exp(-t):.4f})  "
              f"TV={tv:.4f}  noise floor={tv_noise_floor(exact, REPS):.4f}")
