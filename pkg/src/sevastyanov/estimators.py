"""Statistical layer: confidence intervals, count-TV distances, tail fits, regeneration."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from .engine import EventLog, Models, SystemState, simulate
from .rng import replicate

log = logging.getLogger(__name__)

DEFAULT_LEVEL = 0.99


class InsufficientRegenerations(ValueError):
    pass


@dataclass(frozen=True)
class EstimateCI:
    point: float
    ci_lo: float
    ci_hi: float
    level: float
    reps: int
    method: str
    extra: dict = field(default_factory=dict)

    def covers(self, value: float) -> bool:
        return self.ci_lo <= value <= self.ci_hi

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_hi - self.ci_lo)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TailCurve:
    grid: np.ndarray
    values: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    kind: str = "survival"
    reps: int = 0

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        for name in ("grid", "values", "ci_lo", "ci_hi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def to_csv(self, path, value_name: str | None = None) -> None:
        name = value_name or self.kind
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", name, "ci_lo", "ci_hi"])
            for row in zip(self.grid, self.values, self.ci_lo, self.ci_hi):
                w.writerow([repr(float(v)) for v in row])


def _z(level: float) -> float:
    return float(stats.norm.ppf(0.5 + level / 2))


def mean_ci(samples, level: float = DEFAULT_LEVEL, method: str = "normal", **extra) -> EstimateCI:
    """Normal-approximation CI for a sample mean."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    m = float(x.mean()) if n else math.nan
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    z = _z(level)
    return EstimateCI(m, m - z * se, m + z * se, level, n, method, dict(extra))


def proportion_ci(successes: int, n: int, level: float = DEFAULT_LEVEL) -> tuple[float, float, float]:
    """Wilson score interval; well-behaved near 0 and 1."""
    if n == 0:
        return math.nan, 0.0, 1.0
    p = successes / n
    z = _z(level)
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the exact endpoints at 0 and n are 0 and 1; rounding would otherwise nudge them inside
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return p, lo, hi


# total variation -----------------------------------------------------------------


def _as_pmf(p) -> np.ndarray:
    if isinstance(p, dict):
        k = max(p) if p else 0
        arr = np.zeros(k + 1)
        for i, v in p.items():
            arr[i] = v
        return arr
    return np.asarray(p, dtype=float)


def tv_counts(p, q) -> float:
    """sum_k |p_k - q_k| (twice the largest event discrepancy); range [0, 2]."""
    p, q = _as_pmf(p), _as_pmf(q)
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a normalised pmf (sum={v.sum()!r})")
    k = max(len(p), len(q))
    p = np.pad(p, (0, k - len(p)))
    q = np.pad(q, (0, k - len(q)))
    return float(np.abs(p - q).sum())


def empirical_pmf(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=int)
    return np.bincount(c) / len(c)


def tv_noise_floor(p, reps: int) -> float:
    """Expected TV between an empirical pmf of ``reps`` draws and the true pmf ``p`` (normal approx.)."""
    p = _as_pmf(p)
    return float(np.sum(np.sqrt(2.0 * p * (1 - p) / (math.pi * reps))))


def _counts_task(stream, payload):
    x, models, times, mode = payload
    lg = simulate(x, float(times[-1]) + 1e-12 if times[-1] > 0 else 1e-12, mode, models, stream)
    return [lg.count_at(x.clock + t) for t in times]


def marginal_counts_grid(times, x: SystemState, models: Models, reps: int, seed: int, mode: str = "residual",
                         workers: int = 1) -> np.ndarray:
    """Counts n_t from ``reps`` independent paths started at ``x``; array of shape (reps, len(times))."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValueError("times must be non-negative and sorted")
    res = replicate(_counts_task, reps, seed, (x, models, times.tolist(), mode), workers)
    return np.asarray(res, dtype=int)


def marginal_counts_at(t: float, x: SystemState, models: Models, reps: int, rng_seed: int, mode: str = "residual",
                       workers: int = 1) -> np.ndarray:
    """Empirical pmf of n_t from ``x``."""
    if t == 0:
        out = np.zeros(x.n + 1)
        out[x.n] = 1.0
        return out
    c = marginal_counts_grid([t], x, models, reps, rng_seed, mode, workers)[:, 0]
    return empirical_pmf(c)


def _final_state_task(stream, payload):
    x, models, t, mode = payload
    return simulate(x, t, mode, models, stream).final.elapsed


def marginal_states_at(t: float, x: SystemState, models: Models, reps: int, seed: int, mode: str = "residual",
                       workers: int = 1) -> list[tuple]:
    """Elapsed-time vectors X_t from ``reps`` independent paths started at ``x``."""
    if not t > 0:
        return [x.elapsed] * reps
    return replicate(_final_state_task, reps, seed, (x, models, float(t), mode), workers)


def tv_binned_states(states, law, hazard, width: float = 0.25) -> float:
    """Full-state TV between an empirical sample of states and the stationary law, on a grid of cells.

    A cell is the count k together with the bin index of every ordered
    coordinate.  Stationary coordinates are i.i.d. with the stationary-excess
    law, so exact cell masses are p_k times a product of bin masses.  The
    result lower-bounds the unbinned TV and dominates the count TV.
    """
    if not width > 0:
        raise ValueError("bin width must be positive")
    q = law.mean_service
    emp: dict[tuple, int] = {}
    for el in states:
        key = (len(el),) + tuple(int(v // width) for v in el)
        emp[key] = emp.get(key, 0) + 1
    n = len(states)
    cache: dict[int, float] = {}

    def bin_mass(j):
        if j not in cache:
            lo, hi = j * width, (j + 1) * width
            cache[j] = (hazard.integrated_survival(hi) - hazard.integrated_survival(lo)) / q
        return cache[j]

    covered = 0.0
    tv = 0.0
    for key, c in emp.items():
        k = key[0]
        exact = float(law.p[k]) if k < len(law.p) else 0.0
        for j in key[1:]:
            exact *= bin_mass(j)
        covered += exact
        tv += abs(c / n - exact)
    return float(tv + max(0.0, 1.0 - covered))


# polynomial tails ------------------------------------------------------------------


@dataclass(frozen=True)
class TailFit:
    slope: float
    log_c: float
    residual: float
    window: tuple
    super_polynomial: bool
    warnings: tuple = ()

    def to_dict(self):
        return asdict(self)


def fit_polynomial_tail(curve: TailCurve, window=None) -> TailFit:
    """Least squares of log(value) on log(1 + t) over ``window`` (slice or (lo, hi) index pair).

    Non-positive values inside the window are dropped with a warning.  The fit
    is flagged super-polynomial when the slope on the second half of the window
    is markedly steeper than on the first half.
    """
    g, v = curve.grid, curve.values
    if window is None:
        lo, hi = 0, len(g)
    elif isinstance(window, slice):
        lo, hi, _ = window.indices(len(g))
    else:
        lo, hi = window
    idx = np.arange(lo, hi)
    warns = []
    keep = idx[v[idx] > 0]
    if len(keep) < len(idx):
        warns.append(f"dropped {len(idx) - len(keep)} non-positive points from the window")
        log.warning(warns[-1])
    if len(keep) < 2:
        raise ValueError("fewer than two positive points in the fit window")
    X = np.log1p(g[keep])
    Y = np.log(v[keep])
    slope, intercept = np.polyfit(X, Y, 1)
    resid = float(np.sqrt(np.mean((Y - (slope * X + intercept)) ** 2)))
    sup = False
    if len(keep) >= 6:
        h = len(keep) // 2
        s1 = np.polyfit(X[:h], Y[:h], 1)[0]
        s2 = np.polyfit(X[h:], Y[h:], 1)[0]
        sup = bool(s2 < 1.25 * s1 - 0.5)
    return TailFit(float(slope), float(intercept), resid, (int(keep[0]), int(keep[-1]) + 1), sup, tuple(warns))


# regeneration ---------------------------------------------------------------------------


def _count_integral(reward, births, t0, t1):
    return reward(len(births)) * (t1 - t0)


def regenerative_mean(path: EventLog, reward: Callable, kind: str = "count", level: float = DEFAULT_LEVEL,
                      min_cycles: int = 30) -> EstimateCI:
    """Ratio estimator of the long-run mean of ``reward`` over regeneration cycles.

    Cycles run between successive entries into the empty state.  ``kind="count"``
    means ``reward(n)`` depends on the count only (integrated exactly);
    ``kind="state"`` means ``reward(elapsed_array)`` and is integrated by
    Gauss-Legendre quadrature on each inter-event segment.  The CI is a
    jackknife over cycles.
    """
    entries = path.empty_entries()
    if path.init.is_empty:
        entries = [path.init.clock] + entries
    if len(entries) - 1 < min_cycles:
        raise InsufficientRegenerations(f"only {max(len(entries) - 1, 0)} complete cycles (need {min_cycles})")
    if kind == "count":
        integ = _count_integral
    elif kind == "state":
        from .lyapunov import gauss_legendre

        def integ(reward, births, t0, t1):
            if not births:
                return reward(np.empty(0)) * (t1 - t0)
            b = np.asarray(births)
            return gauss_legendre(lambda s: np.array([reward(si - b) for si in s]), t0, t1)
    else:
        raise ValueError("kind must be 'count' or 'state'")
    c_start, c_end = entries[0], entries[-1]
    ys = np.zeros(len(entries) - 1)
    taus = np.diff(entries)
    ci = 0
    for t0, t1, births in path.segments():
        if t1 <= c_start:
            continue
        if t0 >= c_end:
            break
        while ci < len(ys) - 1 and t0 >= entries[ci + 1]:
            ci += 1
        ys[ci] += integ(reward, births, t0, t1)
    Y, T = ys.sum(), taus.sum()
    point = Y / T
    n = len(ys)
    loo = (Y - ys) / (T - taus)
    pseudo = n * point - (n - 1) * loo
    se = pseudo.std(ddof=1) / math.sqrt(n)
    z = _z(level)
    return EstimateCI(float(point), float(point - z * se), float(point + z * se), level, n, "regenerative-jackknife",
                      {"cycles": n, "total_time": float(T)})
