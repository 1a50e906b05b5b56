"""Closed-form stationary law of the Erlang-Sevastyanov system.

The count probabilities are

    p_k = p_0 * prod_{i<k} lambda_i / (q^k k!),    q^-1 = mean service time,

for 0 <= k <= N, and the density of the Markovised state on the k-customer
subspace is ``p_0 prod_{i<k} lambda_i / k! * prod_j S(x^j)``.  Elapsed times in
equilibrium are i.i.d. with density ``S(x) / q^-1`` (the stationary-excess law).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arrivals import ArrivalModel
from .engine import SystemState
from .rng import as_stream
from .service_dist import HazardModel, mean_service

TAIL_TOL = 1e-16  # well below the 1e-12 contract so truncation does not perturb p_k
K_HARD_CAP = 10**5


class NonNormalizableError(ValueError):
    """The stationary series diverges (or sits on the stability boundary)."""


@dataclass(frozen=True)
class StationaryLaw:
    p: np.ndarray
    tail_mass: float
    mean_service: float
    N: float

    @property
    def p0(self) -> float:
        return float(self.p[0])

    @property
    def k_max(self) -> int:
        return len(self.p) - 1

    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.p)), self.p))

    def to_dict(self) -> dict:
        return {
            "p0": self.p0,
            "k_max": self.k_max,
            "tail_mass": self.tail_mass,
            "mean_service": self.mean_service,
            "N": "inf" if self.N == math.inf else int(self.N),
            "mean_count": self.mean(),
        }


def count_pmf(arrival: ArrivalModel, mean_service_time: float, N: float = math.inf) -> StationaryLaw:
    """Exact stationary pmf of the number of busy servers."""
    qinv = float(mean_service_time)
    if not qinv > 0:
        raise ValueError("mean service time must be positive")
    if N != math.inf:
        N = int(N)
        if N < 1:
            raise ValueError("N must be >= 1")
    if N == math.inf and qinv * arrival.limsup_ratio() >= 1.0:
        raise NonNormalizableError(
            f"stationary series does not converge: q^-1 limsup lambda_n/(n+1) = "
            f"{qinv * arrival.limsup_ratio():.4g} >= 1")
    # log a_k where a_k = prod_{i<k} lambda_i qinv^k / k!
    logs = [0.0]
    log_norm = 0.0
    k = 0
    tail = 0.0
    log_tol = math.log(TAIL_TOL)
    while True:
        if N != math.inf and k >= N:
            break
        lam = arrival.rate(k)
        if lam == 0.0:
            break  # finite support
        logs.append(logs[-1] + math.log(lam) + math.log(qinv) - math.log(k + 1))
        log_norm = float(np.logaddexp(log_norm, logs[-1]))
        k += 1
        if N == math.inf:
            rbar = qinv * arrival.tail_ratio_sup(k)
            if rbar < 1.0:
                # a_{k+j} <= a_k rbar^j, so the tail beyond k is at most a_k rbar/(1-rbar)
                log_tail = logs[-1] + math.log(rbar) - math.log1p(-rbar) if rbar > 0 else -math.inf
                if log_tail - log_norm < log_tol:
                    tail = math.exp(log_tail - log_norm)
                    break
            if k >= K_HARD_CAP:
                raise NonNormalizableError("tail mass not below tolerance within the hard cap")
    logs = np.asarray(logs)
    log_norm = np.logaddexp.reduce(logs)
    p = np.exp(logs - log_norm)
    return StationaryLaw(p=p, tail_mass=tail, mean_service=qinv, N=N)


def stationary_density_at(state: SystemState, law: StationaryLaw, hazard: HazardModel, arrival: ArrivalModel | None = None) -> float:
    """Density of the stationary law at an elapsed-time vector (w.r.t. Lebesgue measure on R_+^k)."""
    k = state.n
    if k > law.N:
        raise ValueError("state dimension exceeds N")
    if k == 0:
        return law.p0
    if k >= len(law.p):
        return 0.0
    # p0 prod lambda_i / k! = p_k / qinv^k
    coef = law.p[k] / law.mean_service**k
    return float(coef * math.exp(-sum(hazard.H(x) for x in state.elapsed)))


def sample_count(law: StationaryLaw, u: float) -> int:
    cdf = np.cumsum(law.p)
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="left"), len(cdf) - 1))


def sample_stationary(law: StationaryLaw, hazard: HazardModel, rng) -> SystemState:
    """Draw k from the count pmf, then k i.i.d. stationary-excess elapsed times."""
    s = as_stream(rng)
    k = sample_count(law, s.uniform())
    return SystemState(tuple(hazard.equilibrium_inv(1.0 - s.uniform()) for _ in range(k)))


class _Sampler:
    """Cached inverse-cdf for repeated stationary draws."""

    def __init__(self, law: StationaryLaw, hazard: HazardModel):
        self.cdf = np.cumsum(law.p).tolist()
        self.hazard = hazard

    def __call__(self, stream) -> SystemState:
        import bisect

        u = stream.uniform() * self.cdf[-1]
        k = min(bisect.bisect_left(self.cdf, u), len(self.cdf) - 1)
        return SystemState(tuple(self.hazard.equilibrium_inv(1.0 - stream.uniform()) for _ in range(k)))


def insensitivity_report(hazard1: HazardModel, hazard2: HazardModel, arrival: ArrivalModel, N: float = math.inf,
                         simulate_reps: int = 0, t: float = 60.0, seed: int = 0) -> dict:
    """Compare the exact count laws of two service laws with equal means.

    With ``simulate_reps > 0`` also estimates the count law at time ``t`` from
    the empty state under each law and reports the empirical TV distances.
    """
    m1, m2 = mean_service(hazard1), mean_service(hazard2)
    if abs(m1 - m2) >= 1e-9:
        raise ValueError(f"means differ: {m1} vs {m2}")
    from .estimators import tv_counts

    law1 = count_pmf(arrival, m1, N)
    law2 = count_pmf(arrival, m2, N)
    out = {
        "mean_service": [m1, m2],
        "exact_tv": tv_counts(law1.p, law2.p),
        "identical": bool(len(law1.p) == len(law2.p) and np.allclose(law1.p, law2.p, rtol=1e-12, atol=0)),
    }
    if simulate_reps:
        from .engine import EMPTY, Models
        from .estimators import marginal_counts_at

        emp = []
        for i, hz in enumerate((hazard1, hazard2)):
            emp.append(marginal_counts_at(t, EMPTY, Models(hz, arrival, N), simulate_reps, seed + i))
        out["simulated_tv_between"] = tv_counts(emp[0], emp[1])
        out["simulated_tv_to_exact"] = [tv_counts(emp[0], law1.p), tv_counts(emp[1], law2.p)]
    return out


def time_average_counts(log, burn_in: float) -> np.ndarray:
    """Long-run occupancy pmf of one path: fraction of time spent at each count after ``burn_in``."""
    t0 = log.init.clock + burn_in
    end = log.end_time
    occ: dict[int, float] = {}
    n = log.n0
    t = log.init.clock
    for te, na in zip(log.times, log.n_after):
        lo, hi = max(t, t0), min(te, end)
        if hi > lo:
            occ[n] = occ.get(n, 0.0) + hi - lo
        n, t = na, te
    lo = max(t, t0)
    if end > lo:
        occ[n] = occ.get(n, 0.0) + end - lo
    kmax = max(occ) if occ else 0
    out = np.zeros(kmax + 1)
    for k, v in occ.items():
        out[k] = v
    return out / out.sum()
