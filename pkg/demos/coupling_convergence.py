"""Coupling bound against the observed distance to stationarity.

Two copies of the queue (one from x, one from the stationary law) run
independently until both are empty at once.  Twice the tail of that meeting
time bounds the total-variation distance of the count at time t from the
stationary Poisson law; the observed TV decays at least polynomially with
exponent k* + 1.
"""

import numpy as np

from sevastyanov import arrivals as ar
from sevastyanov import service_dist as sd
from sevastyanov.certificate import search_certificate
from sevastyanov.coupling import coupling_tail
from sevastyanov.engine import Models, SystemState
from sevastyanov.estimators import (TailCurve, empirical_pmf, fit_polynomial_tail, marginal_counts_grid, tv_counts,
                                    tv_noise_floor)
from sevastyanov.stationary import count_pmf

REPS = 5000
cert = search_certificate(10.0, 0.5, 0.5)
models = Models(sd.pareto_floor(10.0), ar.constant(0.5))
x = SystemState((0.0, 0.0))
grid = np.linspace(0.02, 1.0, 25)

tail = coupling_tail(x, cert, models, grid, REPS, 1, cap=1e3)
law = count_pmf(models.arrival, sd.mean_service(models.hazard))
counts = marginal_counts_grid(grid, x, models, REPS, 2)
tv = np.array([tv_counts(empirical_pmf(counts[:, j]), law.p) for j in range(len(grid))])
floor = tv_noise_floor(law.p, REPS)

print(f"k* = {cert.k:.3f}, TV noise floor at {REPS} reps = {floor:.4f}")
print(f"{'t':>6} {'TV':>8} {'2P(T>t)':>8}")
for t, v, p in zip(grid, tv, tail.values):
    print(f"{t:6.2f} {v:8.4f} {2 * p:8.4f}")
keep = np.nonzero(tv > 5 * floor)[0]
fit = fit_polynomial_tail(TailCurve(grid, tv, tv, tv, "tv", REPS), (int(keep[0]), int(keep[-1]) + 1))
print(f"log-log slope of TV above the noise: {fit.slope:.2f} (certified rate -(k*+1) = {-(cert.k + 1):.2f})")
