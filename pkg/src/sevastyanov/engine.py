"""Event-driven simulation of the Markovised process of elapsed service times.

The state is either the empty symbol (no customers) or the ordered vector of
elapsed service times ``(x^1, ..., x^n)``.  Between events every coordinate
grows at unit rate.  Internally a path stores *birth times* ``b_i = t - x_i``
so that nothing has to be updated between events.

Two exact samplers of the same law are provided:

``residual``
    every arriving customer draws a full service time by inverse transform and
    its departure is scheduled; initial customers draw a service conditioned on
    exceeding their elapsed time.
``thinning``
    every customer in service carries a candidate clock of rate ``hazard_sup``;
    a candidate for customer ``i`` is accepted with probability
    ``h(x^i) / hazard_sup``.  This is the generator written out term by term.

In both modes the arrival clock (rate ``lambda_n``) is re-armed after every
event, which is exact because ``lambda_n`` is constant between events.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .arrivals import ArrivalModel
from .rng import Stream, as_stream
from .service_dist import HazardModel, service_from_uniform

ARRIVAL, DEPARTURE, BLOCKED = 0, 1, 2
KIND_NAMES = {ARRIVAL: "arrival", DEPARTURE: "departure", BLOCKED: "blocked"}
MODES = ("residual", "thinning")
DEFAULT_MAX_EVENTS = 10**7


class ContractViolation(ValueError):
    """Precondition of a state transition violated."""


class ExplosionSuspected(RuntimeError):
    """Event ceiling reached before the horizon."""


@dataclass(frozen=True)
class SystemState:
    """Elapsed service times; the empty tuple encodes the empty state."""

    elapsed: tuple = ()
    clock: float = 0.0

    def __post_init__(self):
        el = tuple(float(v) for v in self.elapsed)
        if any(v < 0 or math.isnan(v) for v in el):
            raise ContractViolation("elapsed service times must be non-negative")
        object.__setattr__(self, "elapsed", el)

    @property
    def n(self) -> int:
        return len(self.elapsed)

    @property
    def is_empty(self) -> bool:
        return not self.elapsed

    def births(self) -> list[float]:
        return [self.clock - x for x in self.elapsed]

    def __repr__(self):
        body = "Δ0" if self.is_empty else ", ".join(f"{x:.6g}" for x in self.elapsed)
        return f"SystemState({body}; t={self.clock:.6g})"


EMPTY = SystemState()


@dataclass(frozen=True)
class Models:
    """Service law, arrival intensities and server count (``math.inf`` for no blocking)."""

    hazard: HazardModel
    arrival: ArrivalModel
    N: float = math.inf

    def __post_init__(self):
        if not (self.N == math.inf or (float(self.N).is_integer() and self.N >= 1)):
            raise ValueError("N must be a positive integer or infinity")


def apply_arrival(state: SystemState, j: int, N: float = math.inf) -> SystemState:
    """Insert a fresh customer (elapsed 0) after position ``j`` (0 <= j <= n)."""
    n = state.n
    if not 0 <= j <= n:
        raise ContractViolation(f"insertion position {j} outside 0..{n}")
    if n >= N:
        raise ContractViolation("all servers busy")
    el = state.elapsed
    return SystemState(el[:j] + (0.0,) + el[j:], state.clock)


def apply_departure(state: SystemState, i: int) -> SystemState:
    """Remove customer ``i`` (1-based)."""
    n = state.n
    if n == 0:
        raise ContractViolation("departure from the empty state")
    if not 1 <= i <= n:
        raise ContractViolation(f"departure index {i} outside 1..{n}")
    el = state.elapsed
    return SystemState(el[: i - 1] + el[i:], state.clock)


# ---------------------------------------------------------------------------
# event log


@dataclass
class EventLog:
    """Record of one path.

    ``positions`` holds the insertion index ``j`` for arrivals (0-based slot,
    the new customer sits at index ``j``) and the 0-based index of the leaving
    customer for departures; -1 for blocked arrivals.
    """

    init: SystemState
    end_time: float
    mode: str
    seed: int | None = None
    times: list = field(default_factory=list)
    kinds: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    n_after: list = field(default_factory=list)
    final: SystemState | None = None
    stopped_at: float | None = None

    def __len__(self):
        return len(self.times)

    @property
    def n0(self) -> int:
        return self.init.n

    def count_at(self, t: float) -> int:
        """Customer count just after all events at times <= t."""
        k = bisect.bisect_right(self.times, t)
        return self.n_after[k - 1] if k else self.n0

    def counts_at(self, times) -> np.ndarray:
        return np.array([self.count_at(float(t)) for t in np.atleast_1d(times)], dtype=int)

    def bookkeeping_ok(self) -> bool:
        n = self.n0
        last = -math.inf
        for t, k, na in zip(self.times, self.kinds, self.n_after):
            if not t > last:
                return False
            last = t
            if k == ARRIVAL:
                n += 1
            elif k == DEPARTURE:
                n -= 1
            if n != na or n < 0:
                return False
        return True

    def segments(self) -> Iterator[tuple]:
        """Yield ``(t_start, t_end, births)`` for each inter-event interval up to the end.

        ``births`` is a tuple; elapsed times on the segment are ``s - b_i``.
        """
        births = self.init.births()
        t = self.init.clock
        end = self.stopped_at if self.stopped_at is not None else self.end_time
        for te, k, p in zip(self.times, self.kinds, self.positions):
            yield t, te, tuple(births)
            if k == ARRIVAL:
                births.insert(p, te)
            elif k == DEPARTURE:
                del births[p]
            t = te
        if end > t:
            yield t, end, tuple(births)

    def state_at(self, t: float) -> SystemState:
        births = self.init.births()
        for te, k, p in zip(self.times, self.kinds, self.positions):
            if te > t:
                break
            if k == ARRIVAL:
                births.insert(p, te)
            elif k == DEPARTURE:
                del births[p]
        return SystemState(tuple(t - b for b in births), t)

    def empty_entries(self) -> list[float]:
        """Times at which the path enters the empty state (after having left it)."""
        return [t for t, k, na in zip(self.times, self.kinds, self.n_after) if k == DEPARTURE and na == 0]

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "kind", "n_after"])
            for t, k, na in zip(self.times, self.kinds, self.n_after):
                w.writerow([repr(float(t)), KIND_NAMES[k], na])


def read_eventlog_csv(path) -> list[tuple]:
    """Parse an exported log back into ``(time, kind, n_after)`` rows."""
    rows = []
    with open(Path(path), newline="") as fh:
        r = csv.DictReader(fh)
        for row in r:
            rows.append((float(row["time"]), row["kind"], int(row["n_after"])))
    return rows


# ---------------------------------------------------------------------------
# stepper


class Runner:
    """One path advanced event by event.

    ``next_time`` is the time of the next candidate event; ``fire()`` performs
    it.  Two runners with independent streams can be interleaved on a merged
    timeline because each copy's clocks depend only on its own state.
    """

    def __init__(self, init: SystemState, models: Models, mode: str, stream: Stream, log: EventLog | None = None,
                 max_events: int = DEFAULT_MAX_EVENTS):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if init.n > models.N:
            raise ContractViolation("initial state exceeds server count")
        self.models = models
        self.hazard = models.hazard
        self.arrival = models.arrival
        self.N = models.N
        self.mode = mode
        self.stream = stream
        self.log = log
        self.max_events = max_events
        self.events = 0
        self.t = init.clock
        self.births = init.births()
        self.hsup = self.hazard.hazard_sup
        if mode == "thinning" and not math.isfinite(self.hsup):
            raise ValueError("thinning needs a finite hazard_sup")
        if mode == "residual":
            hz = self.hazard
            self.deps = [b + service_from_uniform(hz, stream.uniform(), self.t - b) for b in self.births]
        self._arm()

    @property
    def n(self) -> int:
        return len(self.births)

    def state(self) -> SystemState:
        t = self.t
        return SystemState(tuple(t - b for b in self.births), t)

    def _arm(self):
        n = len(self.births)
        lam = self.arrival.rate(n)
        if self.mode == "residual":
            self.t_arr = self.t + self.stream.exponential(lam)
            self.next_time = min(self.t_arr, min(self.deps)) if n else self.t_arr
        else:
            self.next_time = self.t + self.stream.exponential(lam + n * self.hsup)

    def fire(self) -> int:
        """Advance to ``next_time`` and perform the event; returns the kind or -1 (rejected candidate)."""
        self.events += 1
        if self.events > self.max_events:
            raise ExplosionSuspected(f"more than {self.max_events} events before the horizon")
        t = self.next_time
        self.t = t
        births = self.births
        n = len(births)
        stream = self.stream
        kind = -1
        pos = -1
        if self.mode == "residual":
            # departures take priority over an arrival at the same instant
            if n and t < self.t_arr or (n and t in self.deps):
                deps = self.deps
                pos = deps.index(t)
                del births[pos]
                del deps[pos]
                kind = DEPARTURE
            elif n >= self.N:
                kind = BLOCKED
            else:
                pos = int(stream.uniform() * (n + 1)) if n else 0
                if pos > n:
                    pos = n
                births.insert(pos, t)
                self.deps.insert(pos, t + service_from_uniform(self.hazard, stream.uniform()))
                kind = ARRIVAL
        else:
            lam = self.arrival.rate(n)
            u = stream.uniform() * (lam + n * self.hsup)
            if u <= lam:
                if n >= self.N:
                    kind = BLOCKED
                else:
                    pos = int(stream.uniform() * (n + 1)) if n else 0
                    if pos > n:
                        pos = n
                    births.insert(pos, t)
                    kind = ARRIVAL
            else:
                i = int((u - lam) / self.hsup)
                if i >= n:
                    i = n - 1
                if stream.uniform() * self.hsup <= self.hazard.h(t - births[i]):
                    del births[i]
                    pos = i
                    kind = DEPARTURE
        if kind >= 0 and self.log is not None:
            lg = self.log
            lg.times.append(t)
            lg.kinds.append(kind)
            lg.positions.append(pos)
            lg.n_after.append(len(births))
        self._arm()
        return kind


def _models(models=None, hazard=None, arrival=None, N=math.inf) -> Models:
    if models is not None:
        return models
    return Models(hazard, arrival, N)


def simulate(init: SystemState, horizon: float, mode: str, models: Models, rng, seed: int | None = None,
             max_events: int = DEFAULT_MAX_EVENTS, record: bool = True) -> EventLog:
    """Simulate from ``init`` over ``[init.clock, init.clock + horizon]`` and return the event log."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    stream = as_stream(rng)
    end = init.clock + horizon
    log = EventLog(init=init, end_time=end, mode=mode, seed=seed)
    r = Runner(init, models, mode, stream, log if record else None, max_events)
    while r.next_time <= end:
        r.fire()
    r.t = end
    log.final = r.state()
    return log


@dataclass(frozen=True)
class HitResult:
    time: float
    censored: bool


def hitting_time_empty(init: SystemState, models: Models, rng, cap: float, mode: str = "residual",
                       max_events: int = DEFAULT_MAX_EVENTS) -> HitResult:
    """First time the path reaches the empty state, censored at ``cap`` (measured from ``init.clock``)."""
    if not cap > 0:
        raise ValueError("cap must be positive")
    if init.is_empty:
        return HitResult(0.0, False)
    stream = as_stream(rng)
    r = Runner(init, models, mode, stream, None, max_events)
    end = init.clock + cap
    while r.next_time <= end:
        if r.fire() == DEPARTURE and not r.births:
            return HitResult(r.t - init.clock, False)
    return HitResult(cap, True)


def hitting_times_batch(init: SystemState, models: Models, reps: int, seed: int, cap: float,
                        chunk: int = 100_000, max_steps: int = 10**6) -> tuple[np.ndarray, np.ndarray]:
    """``reps`` independent copies of tau_0 from ``init``, advanced in lockstep with numpy.

    The hitting time of the empty state depends only on the multiset of
    scheduled departures, so each path is one row of pending departure times
    (the residual sampler without positions).  Every step performs one event
    on every live row.  Streams come from ``SeedSequence(seed)``, so the draws
    differ from the per-replication event engine although the law is the same.
    Returns ``(times, censored)`` with censored times set to ``cap``.
    """
    if not cap > 0:
        raise ValueError("cap must be positive")
    times = np.zeros(reps)
    cens = np.zeros(reps, dtype=bool)
    if init.is_empty or reps == 0:
        return times, cens
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    hz, arrival = models.hazard, models.arrival
    el = np.asarray(init.elapsed, dtype=float)
    n0 = el.size
    rate_table: list[float] = []

    def rates(n):
        top = int(n.max())
        while len(rate_table) <= top:
            k = len(rate_table)
            rate_table.append(arrival.rate(k) if k < models.N else 0.0)
        return np.asarray(rate_table)[n]

    def unif(size):
        return 1.0 - gen.random(size)  # (0, 1]

    for start in range(0, reps, chunk):
        P = min(chunk, reps - start)
        W = max(2 * n0, n0 + 4)
        D = np.full((P, W), np.inf)
        # full service lengths conditioned on exceeding the elapsed times, minus what is already served
        D[:, :n0] = hz.cumhaz_inv(hz.cumhaz(el)[None, :] - np.log(unif((P, n0)))) - el[None, :]
        t = np.zeros(P)
        n = np.full(P, n0)
        rows = np.arange(start, start + P)
        steps = 0
        while rows.size:
            steps += 1
            if steps > max_steps:
                raise ExplosionSuspected(f"more than {max_steps} lockstep events")
            k = rows.size
            with np.errstate(divide="ignore"):
                a = t - np.log(unif(k)) / rates(n)
            j = np.argmin(D, axis=1)
            r = np.arange(k)
            d = D[r, j]
            is_arr = a < d
            nxt = np.where(is_arr, a, d)
            over = nxt > cap
            dep = ~is_arr & ~over
            D[r[dep], j[dep]] = np.inf
            n = n - dep
            t = np.where(over, t, nxt)
            done = dep & (n == 0)
            add = is_arr & ~over
            if add.any():
                if np.any(n[add] >= D.shape[1]):
                    D = np.hstack([D, np.full((k, D.shape[1]), np.inf)])
                ra = r[add]
                slot = np.argmax(np.isinf(D[ra]), axis=1)
                D[ra, slot] = a[add] + hz.cumhaz_inv(-np.log(unif(ra.size)))
                n = n + add
            times[rows[done]] = t[done]
            times[rows[over]] = cap
            cens[rows[over]] = True
            keep = ~(done | over)
            if not keep.all():
                rows, D, t, n = rows[keep], D[keep], t[keep], n[keep]
    return times, cens
