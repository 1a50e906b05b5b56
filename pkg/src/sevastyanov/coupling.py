"""Independent-copies coupling of a path from x with a stationary path.

Two copies run on one merged timeline with independent streams.  The pair
couples at the first instant both copies are empty (after that they can be
run identically).  Along the way the first instant at which one copy is
empty while the other has L_{m,a-1/m} <= R is recorded, together with the
number of entries into that set (the coupling "attempts").
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .certificate import Certificate
from .engine import Models, Runner, SystemState, hitting_time_empty, hitting_times_batch
from .estimators import EstimateCI, TailCurve, mean_ci, proportion_ci
from .rng import as_stream, replicate
from .service_dist import mean_service
from .stationary import _Sampler, count_pmf

log = logging.getLogger(__name__)

DEFAULT_CAP = 1e3


@dataclass(frozen=True)
class CouplingRecord:
    tau0_x: float
    tau_bar_0R: float
    tau_bar_0: float
    attempts: int
    censored_tau0_x: bool
    censored_tau_bar_0R: bool
    censored: bool
    cap: float
    y0_count: int = 0

    @property
    def T(self) -> float:
        return self.tau_bar_0

    def to_dict(self):
        d = asdict(self)
        d["T"] = self.T
        return d


def _level(births, t, m, b):
    """L_{m,b} of a copy given its birth times, 0 at the empty state."""
    if not births:
        return 0.0
    return math.fsum((1.0 + t - x) ** m for x in births) ** b


class _PairSampler:
    def __init__(self, models: Models):
        law = count_pmf(models.arrival, mean_service(models.hazard), models.N)
        self.sample = _Sampler(law, models.hazard)


def simulate_pair(x: SystemState, cert: Certificate, models: Models, cap: float, rng, y: SystemState | None = None,
                  mode: str = "residual", sampler=None) -> CouplingRecord:
    """One coupled pair: X from ``x``, the second copy from the stationary law (or from ``y`` when given)."""
    if not cap > 0:
        raise ValueError("cap must be positive")
    stream = as_stream(rng)
    sx, sy = stream.child(1), stream.child(2)
    if y is None:
        if sampler is None:
            sampler = _PairSampler(models).sample
        y = sampler(sy)
    x = SystemState(x.elapsed, 0.0)
    y = SystemState(y.elapsed, 0.0)
    rx = Runner(x, models, mode, sx)
    ry = Runner(y, models, mode, sy)
    m, b, R = cert.m, cert.a - 1.0 / cert.m, cert.R

    def in_set(t):
        bx, by = rx.births, ry.births
        return (not bx and _level(by, t, m, b) <= R) or (not by and _level(bx, t, m, b) <= R)

    tau0 = 0.0 if x.is_empty else math.nan
    tauR = math.nan
    attempts = 0
    t = 0.0
    inside = in_set(0.0)
    if inside:
        attempts, tauR = 1, 0.0
    if not rx.births and not ry.births:
        return CouplingRecord(0.0, 0.0, 0.0, attempts, False, False, False, cap, y.n)
    while True:
        r = rx if rx.next_time <= ry.next_time else ry
        t = r.next_time
        if t > cap:
            break
        before = in_set(t) if (not rx.births or not ry.births) else False
        kind = r.fire()
        if kind < 0:
            continue
        if math.isnan(tau0) and not rx.births:
            tau0 = t
        if not rx.births and not ry.births:
            if not before:
                attempts += 1
            if math.isnan(tauR):
                tauR = t
            return CouplingRecord(tau0, tauR, t, attempts, False, False, False, cap, y.n)
        if not rx.births or not ry.births:
            now = in_set(t)
            if now and not before:
                attempts += 1
                if math.isnan(tauR):
                    tauR = t
    c0 = math.isnan(tau0)
    cR = math.isnan(tauR)
    return CouplingRecord(cap if c0 else tau0, cap if cR else tauR, cap, attempts, c0, cR, True, cap, y.n)


def _pair_task(stream, payload):
    x, cert, models, cap, mode, sampler = payload
    return simulate_pair(x, cert, models, cap, stream, mode=mode, sampler=sampler)


def coupling_records(x: SystemState, cert: Certificate, models: Models, reps: int, seed: int,
                     cap: float = DEFAULT_CAP, mode: str = "residual", workers: int = 1) -> list[CouplingRecord]:
    sampler = _PairSampler(models).sample
    return replicate(_pair_task, reps, seed, (x, cert, models, cap, mode, sampler), workers)


def survival_curve(samples, censored, t_grid, kind: str = "survival", level: float = 0.99) -> TailCurve:
    """P(T > t) on a grid with Wilson intervals; censored samples count as exceeding every t below the cap."""
    T = np.asarray(samples, dtype=float)
    cens = np.asarray(censored, dtype=bool)
    grid = np.asarray(t_grid, dtype=float)
    vals, lo, hi = [], [], []
    for t in grid:
        if np.any(cens & (T <= t)):
            raise ValueError(f"grid point {t} beyond the censoring cap")
        p, l, h = proportion_ci(int(np.sum(T > t)), len(T), level)
        vals.append(p)
        lo.append(l)
        hi.append(h)
    return TailCurve(grid, np.array(vals), np.array(lo), np.array(hi), kind, len(T))


def coupling_tail(x: SystemState, cert: Certificate, models: Models, t_grid, reps: int, seed: int,
                  cap: float = DEFAULT_CAP, workers: int = 1, records: list | None = None) -> TailCurve:
    """Empirical P(T > t) for the coupling time T from ``reps`` independent pairs."""
    if records is None:
        records = coupling_records(x, cert, models, reps, seed, cap, workers=workers)
    T = [r.T for r in records]
    cens = [r.censored for r in records]
    frac = float(np.mean(cens))
    if frac > 0:
        log.warning("%.3g of pairs censored at cap %g", frac, cap)
    return survival_curve(T, cens, t_grid, "coupling_survival")


# meeting parameters -----------------------------------------------------------------------


@dataclass(frozen=True)
class MeetingParams:
    t1: float
    meeting_failure_prob: float
    success_fraction: float
    success_ci_lo: float
    stress_states: tuple
    survival_upper: tuple

    def to_dict(self):
        d = asdict(self)
        d["stress_states"] = [list(s) for s in self.stress_states]
        return d


class MeetingTimeNotFound(RuntimeError):
    pass


def stress_states(cert: Certificate, sizes=(1, 2, 4, 8)) -> list[SystemState]:
    """States (s, ..., s) with L_{m,a-1/m} = R + 1; sizes whose s would be negative are skipped."""
    m, b = cert.m, cert.a - 1.0 / cert.m
    out = []
    for n in sizes:
        per = (cert.R + 1.0) ** (1.0 / b) / n  # (1 + s)^m
        s = per ** (1.0 / m) - 1.0
        if s >= 0:
            out.append(SystemState((s,) * n))
    return out


def _hit_task(stream, payload):
    x, models, cap, mode = payload
    r = hitting_time_empty(x, models, stream, cap, mode)
    return r.time, r.censored


def estimate_meeting_params(cert: Certificate, models: Models, reps: int, seed: int, t_grid=None,
                            ceiling: float = 1e3, level: float = 0.99, workers: int = 1) -> MeetingParams:
    """Smallest grid time t1 with sup over the stress set of the upper CI of P_u(tau_0 > t1) <= 1/2."""
    if t_grid is None:
        t_grid = np.unique(np.concatenate([np.linspace(0.01, 1, 100), np.geomspace(1, ceiling, 200)]))
    t_grid = np.asarray(t_grid, dtype=float)
    states = stress_states(cert)
    samples = []
    for i, u in enumerate(states):
        res = replicate(_hit_task, reps, seed + 7919 * i, (u, models, ceiling, "residual"), workers)
        # a censored path has not emptied by the ceiling, so it exceeds every grid time
        samples.append(np.array([math.inf if c else t for t, c in res]))
    uppers = np.zeros(len(t_grid))
    for T in samples:
        for j, t in enumerate(t_grid):
            uppers[j] = max(uppers[j], proportion_ci(int(np.sum(T > t)), len(T), level)[2])
    ok = np.nonzero(uppers <= 0.5)[0]
    if not len(ok):
        raise MeetingTimeNotFound(f"P(tau_0 > t) stays above 1/2 up to {t_grid[-1]:g}")
    j = int(ok[0])
    t1 = float(t_grid[j])
    stay = math.exp(-cert.lambda0 * t1)
    # worst case over the stress set of P_u(tau_0 <= t1)
    hit = min(float(np.mean(T <= t1)) for T in samples)
    return MeetingParams(
        t1=t1,
        meeting_failure_prob=1.0 - 0.5 * stay,
        success_fraction=stay * hit,
        success_ci_lo=stay * (1.0 - uppers[j]),
        stress_states=tuple(s.elapsed for s in states),
        survival_upper=tuple(float(v) for v in uppers),
    )


# hitting moments ---------------------------------------------------------------------------


def hitting_moment(x: SystemState, power: float, cert: Certificate, models: Models, reps: int, seed: int,
                   cap: float = 1e4, level: float = 0.99, workers: int = 1, method: str = "engine") -> EstimateCI:
    """Monte-Carlo E_x tau_0^power with the reference level L_{m, a + (ell-1)_+/m}(x) in ``extra``.

    ``method="engine"`` runs the event engine once per replication;
    ``method="batch"`` uses the lockstep numpy sampler (same law, other draws).
    """
    from .lyapunov import L

    if method not in ("engine", "batch"):
        raise ValueError("method must be 'engine' or 'batch'")

    b = cert.a + max(cert.ell - 1.0, 0.0) / cert.m
    ref = L(x.elapsed, cert.m, b)
    if x.is_empty:
        return EstimateCI(0.0, 0.0, 0.0, level, reps, "exact", {"censored_frac": 0.0, "L_ref": ref, "ratio": 0.0})
    if method == "batch":
        T, c = hitting_times_batch(x, models, reps, seed, cap)
        cens = float(c.mean())
    else:
        res = replicate(_hit_task, reps, seed, (x, models, cap, "residual"), workers)
        T = np.array([r[0] for r in res])
        cens = float(np.mean([r[1] for r in res]))
    est = mean_ci(T**power, level)
    lo, hi = est.ci_lo, est.ci_hi
    if cens > 1e-3:
        log.warning("censored fraction %.3g exceeds 1e-3 at cap %g; interval widened", cens, cap)
        hi = math.inf
    return EstimateCI(est.point, lo, hi, level, reps, "mc-moment",
                      {"censored_frac": cens, "L_ref": ref, "ratio": est.point / ref, "power": power,
                       "method": method})
