"""Lyapunov functions L_{m,a}(x) = (sum_j (1 + x^j)^m)^a and generator bookkeeping.

For a non-empty state with S = sum_j (1 + x^j)^m the generator of L = S^a splits as
I1 - I2 + I3 with

    I1 = lambda_n ((S + 1)^a - S^a)                       (arrival of a fresh customer)
    I2 = sum_i h(x^i) (S^a - (S - (1 + x^i)^m)^a)         (departures)
    I3 = sum_i dL/dx^i = a m L_{m-1,1} L_{m,a-1}          (deterministic ageing)

and at the empty state the generator is lambda_0 (f(fresh customer) - f(empty)).
Differences of powers are evaluated as S^a expm1(a log1p(.)) to avoid
cancellation when one coordinate is small relative to S.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .arrivals import ArrivalModel
from .engine import ContractViolation, EventLog, Models, SystemState, simulate
from .estimators import EstimateCI, mean_ci
from .rng import Stream, as_stream, replicate
from .service_dist import HazardModel

_GL = {n: np.polynomial.legendre.leggauss(n) for n in (8, 16)}
_GL_NODES = np.concatenate([_GL[8][0], _GL[16][0]])
REL_TOL = 1e-12


@dataclass(frozen=True)
class LyapunovParams:
    m: float
    a: float
    k: float = 0.0

    def __post_init__(self):
        if not self.m > 1:
            raise ValueError(f"m must exceed 1 (got {self.m})")
        if not self.a > 1:
            raise ValueError(f"a must exceed 1 (got {self.a})")
        if not self.k >= 0:
            raise ValueError(f"k must be non-negative (got {self.k})")

    @classmethod
    def for_evaluation(cls, m: float, a: float, k: float = 0.0) -> "LyapunovParams":
        """Exponents m, a >= 1 for evaluating L and its generator (boundary cases such as m = a = 1).

        The drift theory needs m, a > 1; this constructor only skips that check.
        """
        if not (m >= 1 and a >= 1 and k >= 0):
            raise ValueError("evaluation needs m >= 1, a >= 1, k >= 0")
        obj = object.__new__(cls)
        for name, v in (("m", float(m)), ("a", float(a)), ("k", float(k))):
            object.__setattr__(obj, name, v)
        return obj


@dataclass(frozen=True)
class GeneratorTerms:
    i1: float
    i2: float
    i3: float

    @property
    def total(self) -> float:
        return self.i1 - self.i2 + self.i3


def L(elapsed, m: float, a: float) -> float:
    """L_{m,a} of an elapsed-time vector; 0 for the empty state."""
    x = np.asarray(elapsed, dtype=float)
    if x.size == 0:
        return 0.0
    return float(np.sum((1.0 + x) ** m) ** a)


def lyapunov_value(params: LyapunovParams, state: SystemState) -> float:
    return L(state.elapsed, params.m, params.a)


def time_weighted_value(params: LyapunovParams, t: float, state: SystemState) -> float:
    """(1 + t)^k L_{m,a}(x)."""
    return (1.0 + t) ** params.k * lyapunov_value(params, state)


def _pow_diff_up(S, a):
    # (S + 1)^a - S^a
    return S**a * np.expm1(a * np.log1p(1.0 / S))


def _pow_diff_down(S, y, a):
    # S^a - (S - y)^a, 0 < y <= S
    with np.errstate(divide="ignore"):
        return S**a * -np.expm1(a * np.log1p(-y / S))


def generator_terms(params: LyapunovParams, state: SystemState, arrival: ArrivalModel, hazard: HazardModel,
                    N: float = math.inf) -> GeneratorTerms:
    """Exact I1, I2, I3 at a state.  At the empty state returns (lambda_0 * 1, 0, 0)."""
    m, a = params.m, params.a
    x = np.asarray(state.elapsed, dtype=float)
    n = x.size
    if n == 0:
        return GeneratorTerms(arrival.rate(0) * 1.0, 0.0, 0.0)
    y = (1.0 + x) ** m
    S = float(y.sum())
    lam = arrival.rate(n) if n < N else 0.0
    i1 = lam * float(_pow_diff_up(S, a))
    i2 = float(np.sum(hazard.hazard(x) * _pow_diff_down(S, y, a)))
    i3 = a * m * float(np.sum((1.0 + x) ** (m - 1))) * S ** (a - 1)
    return GeneratorTerms(i1, i2, i3)


def i3_summed_partials(params: LyapunovParams, state: SystemState) -> float:
    """I3 as the explicit sum of the coordinate partial derivatives of L_{m,a}."""
    m, a = params.m, params.a
    x = state.elapsed
    if not x:
        return 0.0
    S = math.fsum((1.0 + v) ** m for v in x)
    outer = a * S ** (a - 1)
    return math.fsum(outer * m * (1.0 + v) ** (m - 1) for v in x)


def drift_constant(C0: float, Lambda: float, m: float, a: float) -> float:
    """C_{m,Lambda,a} = C0 - Lambda a 2^(a-1) - m a."""
    return C0 - Lambda * a * 2 ** (a - 1) - m * a


# deterministic checks ----------------------------------------------------------------


@dataclass
class CheckReport:
    name: str
    applicable: bool
    passed: bool
    margins: dict = field(default_factory=dict)
    violations: int = 0
    checked: int = 0
    reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _preconditions(params, C0, Lambda, arrival, hazard, n_check=1000):
    reasons = []
    if hazard.floor_infimum() < C0:
        reasons.append(f"hazard floor fails: inf (1+t)h(t) = {hazard.floor_infimum():.6g} < C0")
    if any(arrival.rate(n) > Lambda * n * (1 + 1e-12) for n in range(1, n_check)):
        reasons.append("lambda_n > Lambda n for some n")
    am0 = C0 - params.a * (params.m + Lambda * 2 ** (params.a - 1))
    if not am0 > 0:
        reasons.append(f"C0 > a(m + Lambda 2^(a-1)) fails (slack {am0:.6g})")
    return reasons


def drift_inequality_check(params: LyapunovParams, state: SystemState, C0: float, Lambda: float,
                           arrival: ArrivalModel, hazard: HazardModel) -> CheckReport:
    """I1 - I2 + I3 <= -C_{m,Lambda,a} L_{m-1,1} L_{m,a-1} at a non-empty state."""
    reasons = _preconditions(params, C0, Lambda, arrival, hazard)
    if state.is_empty:
        reasons.append("empty state")
    if reasons:
        return CheckReport("drift", False, True, reason="; ".join(reasons))
    m, a = params.m, params.a
    g = generator_terms(params, state, arrival, hazard)
    lhs = g.total
    base = L(state.elapsed, m - 1, 1.0) * L(state.elapsed, m, a - 1)
    c = drift_constant(C0, Lambda, m, a)
    rhs = -c * base
    margin = rhs - lhs
    tol = REL_TOL * (abs(g.i1) + abs(g.i2) + abs(g.i3) + abs(rhs))
    ok = margin >= -tol
    return CheckReport("drift", True, ok, {"lhs": lhs, "rhs": rhs, "margin": margin, "drift_constant": c},
                       violations=int(not ok), checked=1)


def lemma3a_bounds_check(params: LyapunovParams, state: SystemState, arrival: ArrivalModel, hazard: HazardModel,
                         C0: float, Lambda: float) -> CheckReport:
    """Upper bounds on I1 and I2 and the lower bound on I2 at one state."""
    reasons = _preconditions(params, C0, Lambda, arrival, hazard)
    if state.is_empty:
        return CheckReport("lemma3a", False, True, reason="empty state: bounds vacuous")
    if reasons:
        return CheckReport("lemma3a", False, True, reason="; ".join(reasons))
    m, a = params.m, params.a
    g = generator_terms(params, state, arrival, hazard)
    base = L(state.elapsed, m - 1, 1.0) * L(state.elapsed, m, a - 1)
    i1_up = Lambda * a * 2 ** (a - 1) * base
    i2_up = a * hazard.hazard_sup * L(state.elapsed, m, a + 1)
    i2_lo = C0 * base
    margins = {"i1_upper": i1_up - g.i1, "i2_upper": i2_up - g.i2, "i2_lower": g.i2 - i2_lo}
    scale = {"i1_upper": i1_up, "i2_upper": i2_up, "i2_lower": g.i2}
    bad = sum(margins[k] < -REL_TOL * max(abs(scale[k]), 1.0) for k in margins)
    return CheckReport("lemma3a", True, bad == 0, margins, violations=int(bad), checked=3)


def elementary_inequalities_check(samples: int, rng) -> CheckReport:
    """Randomised check of the scalar and vector inequalities used in the drift bounds.

    * L_{m,1}(x)^((m-1)/m) <= L_{m-1,1}(x) for random states and m > 1
    * y^a - x^a >= (y - x) y^(a-1) for 0 < x <= y, a > 1
    * y^a - x^a <= a (y - x) y^(a-1) <= a 2^(a-1) x^(a-1) for y = x + 1, x >= 1
    """
    gen = as_stream(rng).gen
    tol = 1e-12
    # (gm)
    m = 1.0 + gen.exponential(2.0, samples)
    n = gen.integers(1, 51, samples)
    viol_gm = 0
    # vectorise by padding to 50 coordinates with a mask
    x = gen.exponential(1.0, (samples, 50)) * gen.choice([0.1, 1.0, 10.0], (samples, 1))
    mask = np.arange(50)[None, :] < n[:, None]
    base = np.where(mask, 1.0 + x, 0.0)
    with np.errstate(over="ignore"):
        lm = np.sum(np.where(mask, base ** m[:, None], 0.0), axis=1)
        lm1 = np.sum(np.where(mask, base ** (m[:, None] - 1), 0.0), axis=1)
        lhs = np.exp((m - 1) / m * np.log(lm))
    viol_gm = int(np.sum(lhs > lm1 * (1 + tol)))
    # (elem)
    a = 1.0 + gen.exponential(2.0, samples)
    y = gen.exponential(5.0, samples) + 1e-9
    xx = y * gen.random(samples)
    xx = np.maximum(xx, 1e-12)
    lhs_e = y**a - xx**a
    rhs_e = (y - xx) * y ** (a - 1)
    viol_elem = int(np.sum(lhs_e < rhs_e - tol * y**a))
    # upper chain with y = x + 1, x >= 1
    x1 = 1.0 + gen.exponential(5.0, samples)
    y1 = x1 + 1.0
    d = y1**a - x1**a
    mid = a * (y1 - x1) * y1 ** (a - 1)
    top = a * 2 ** (a - 1) * x1 ** (a - 1)
    viol_up = int(np.sum(d > mid * (1 + tol)) + np.sum(mid > top * (1 + tol)))
    total = viol_gm + viol_elem + viol_up
    return CheckReport(
        "elementary",
        True,
        total == 0,
        {"gm": viol_gm, "elem": viol_elem, "elem_upper": viol_up},
        violations=total,
        checked=3 * samples,
    )


def random_states(count: int, rng, n_max: int = 50, scale: float = 1.0) -> list[SystemState]:
    """States with n uniform on 1..n_max and Exp(1)*scale coordinates."""
    gen = as_stream(rng).gen
    ns = gen.integers(1, n_max + 1, count)
    return [SystemState(tuple(gen.exponential(scale, k))) for k in ns]


def _batch_margins(params, X, lam, C0, Lambda, hazard):
    """Drift and bound margins for a stack of states with equal n (rows of ``X``)."""
    m, a = params.m, params.a
    y = (1.0 + X) ** m
    S = y.sum(axis=1)
    i1 = lam * _pow_diff_up(S, a)
    i2 = np.sum(hazard.hazard(X) * _pow_diff_down(S[:, None], y, a), axis=1)
    lm1 = np.sum((1.0 + X) ** (m - 1), axis=1)
    i3 = a * m * lm1 * S ** (a - 1)
    base = lm1 * S ** (a - 1)
    rhs = -drift_constant(C0, Lambda, m, a) * base
    lhs = i1 - i2 + i3
    drift_margin = rhs - lhs
    drift_bad = drift_margin < -REL_TOL * (np.abs(i1) + np.abs(i2) + np.abs(i3) + np.abs(rhs))
    i1_up = Lambda * a * 2 ** (a - 1) * base
    i2_up = a * hazard.hazard_sup * S ** (a + 1)
    i2_lo = C0 * base
    bad3 = ((i1_up - i1 < -REL_TOL * np.maximum(np.abs(i1_up), 1.0)).astype(int)
            + (i2_up - i2 < -REL_TOL * np.maximum(np.abs(i2_up), 1.0))
            + (i2 - i2_lo < -REL_TOL * np.maximum(np.abs(i2), 1.0)))
    return drift_margin, drift_bad, bad3


def drift_suite(params: LyapunovParams, C0: float, Lambda: float, arrival: ArrivalModel, hazard: HazardModel,
                states) -> dict:
    """Run the drift and three-bound checks over many states; returns violation counts and worst margin.

    Same arithmetic as ``drift_inequality_check`` and ``lemma3a_bounds_check``,
    batched over states with a common number of customers.
    """
    out = {"states": 0, "drift_violations": 0, "lemma3a_violations": 0, "not_applicable": 0,
           "min_drift_margin": math.inf}
    states = list(states)
    reasons = _preconditions(params, C0, Lambda, arrival, hazard)
    if reasons:
        out["not_applicable"] = len(states)
        out["reason"] = "; ".join(reasons)
        return out
    groups: dict[int, list] = {}
    for st in states:
        if st.is_empty:
            out["not_applicable"] += 1
        else:
            groups.setdefault(st.n, []).append(st.elapsed)
    for n, rows in groups.items():
        X = np.asarray(rows, dtype=float)
        dm, dbad, b3 = _batch_margins(params, X, arrival.rate(n), C0, Lambda, hazard)
        out["states"] += len(rows)
        out["drift_violations"] += int(dbad.sum())
        out["lemma3a_violations"] += int(b3.sum())
        out["min_drift_margin"] = min(out["min_drift_margin"], float(dm.min()))
    return out


def check_path_drift(log: EventLog, params: LyapunovParams, C0: float, Lambda: float, arrival: ArrivalModel,
                     hazard: HazardModel) -> int:
    """Violations of the drift inequality over all non-empty states visited at event times of a path."""
    bad = 0
    for t in log.times:
        s = log.state_at(t)
        if not s.is_empty:
            bad += drift_inequality_check(params, s, C0, Lambda, arrival, hazard).violations
    return bad


def moment_bound(params: LyapunovParams, x: SystemState, lambda0: float, Lambda: float, t: float) -> float:
    """(L_{m,a}(x) + lambda_0 t) exp((Lambda a 2^(a-1) + m a) t)."""
    m, a = params.m, params.a
    return (lyapunov_value(params, x) + lambda0 * t) * math.exp((Lambda * a * 2 ** (a - 1) + m * a) * t)


def _moment_task(stream, payload):
    params, x, models, times = payload
    lg = simulate(x, times[-1], "residual", models, stream)
    return [lyapunov_value(params, lg.state_at(x.clock + t)) for t in times]


def moment_envelope(params: LyapunovParams, x: SystemState, models: Models, times, reps: int, seed: int,
                    Lambda: float | None = None, level: float = 0.99, workers: int = 1) -> list[dict]:
    """Monte-Carlo E_x L_{m,a}(X_t) with CI against the Gronwall envelope."""
    from .arrivals import lambda_bar

    Lam = lambda_bar(models.arrival) if Lambda is None else Lambda
    times = [float(t) for t in times]
    vals = np.asarray(replicate(_moment_task, reps, seed, (params, x, models, times), workers))
    out = []
    for j, t in enumerate(times):
        est = mean_ci(vals[:, j], level)
        bound = moment_bound(params, x, models.arrival.rate(0), Lam, t)
        out.append({"t": t, "estimate": est.to_dict(), "bound": bound, "passed": est.ci_hi <= bound})
    return out


# Dynkin residual -----------------------------------------------------------------------------


def gauss_legendre(fun, lo: float, hi: float, rtol: float = 1e-9, atol: float = 1e-14, depth: int = 0) -> float:
    """Adaptive Gauss-Legendre: accept the 16-point rule when it agrees with the 8-point rule."""
    if hi <= lo:
        return 0.0
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    v = fun(mid + half * _GL_NODES)  # both rules in one evaluation
    i8 = half * float(np.dot(_GL[8][1], v[:8]))
    i16 = half * float(np.dot(_GL[16][1], v[8:]))
    if abs(i16 - i8) <= max(rtol * abs(i16), atol) or depth >= 30:
        return i16
    return (gauss_legendre(fun, lo, mid, rtol, atol, depth + 1)
            + gauss_legendre(fun, mid, hi, rtol, atol, depth + 1))


class Taper:
    """Identity up to ``flat``, then saturating smoothly (C^1) towards ``flat + width``."""

    def __init__(self, flat: float, width: float):
        self.flat, self.width = float(flat), float(width)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        over = np.maximum(u - self.flat, 0.0)
        return np.where(u <= self.flat, u, self.flat + self.width * -np.expm1(-over / self.width))

    def scalar(self, u: float) -> float:
        if u <= self.flat:
            return float(u)
        return self.flat - self.width * math.expm1(-(u - self.flat) / self.width)

    def diff(self, u_new, u_old, exact_diff):
        """phi(u_new) - phi(u_old), using the cancellation-free ``exact_diff`` in the flat region."""
        inside = np.maximum(u_new, u_old) <= self.flat
        return np.where(inside, exact_diff, self(u_new) - self(u_old))


class DynkinFunction:
    """Bounded test function with an exactly integrable generator along a path segment."""

    name = "abstract"

    def value(self, elapsed: np.ndarray) -> float:
        raise NotImplementedError

    def raw(self, elapsed: np.ndarray) -> float:
        """Argument fed to the taper (for monitoring the flat region)."""
        return 0.0

    def flat_limit(self) -> float:
        return math.inf

    def peak_after(self, births: tuple, t1: float) -> float:
        """Upper bound on the raw argument over a segment ending at ``t1`` and its jump targets."""
        return 0.0

    def generator_integral(self, births: tuple, t0: float, t1: float, models: Models) -> float:
        raise NotImplementedError


class ConstantFunction(DynkinFunction):
    name = "constant"

    def __init__(self, c: float = 1.0):
        self.c = float(c)

    def value(self, elapsed):
        return self.c

    def generator_integral(self, births, t0, t1, models):
        return 0.0


class CountFunction(DynkinFunction):
    """phi(n(x)) with phi the identity up to ``clip``."""

    name = "count"

    def __init__(self, clip: float = 1000.0):
        self.phi = Taper(clip, clip)

    def value(self, elapsed):
        return self.phi.scalar(len(elapsed))

    def peak_after(self, births, t1):
        return len(births) + 1.0

    def raw(self, elapsed):
        return float(len(elapsed))

    def flat_limit(self):
        return self.phi.flat

    def generator_integral(self, births, t0, t1, models):
        n = len(births)
        phi = self.phi
        f = phi.scalar
        lam = models.arrival.rate(n) if n < models.N else 0.0
        out = lam * (t1 - t0) * (f(n + 1) - f(n))
        if n:
            H = models.hazard.H
            mass = math.fsum(H(t1 - b) - H(t0 - b) for b in births)
            out += (f(n - 1) - f(n)) * mass
        return out


class LyapunovFunction(DynkinFunction):
    """phi(L_{m,a}(x)) with phi the identity up to ``flat`` and bounded by ``flat + width``."""

    name = "lyapunov"

    def __init__(self, m: float, a: float, flat: float = 1e4, width: float | None = None):
        self.m, self.a = float(m), float(a)
        self.phi = Taper(flat, flat if width is None else width)

    def value(self, elapsed):
        return self.phi.scalar(L(elapsed, self.m, self.a))

    def peak_after(self, births, t1):
        # L grows along the flow, and an arrival at t1 gives the largest jump target
        b = np.asarray(births, dtype=float)
        return (float(((1.0 + t1 - b) ** self.m).sum()) + 1.0) ** self.a

    def raw(self, elapsed):
        return L(elapsed, self.m, self.a)

    def flat_limit(self):
        return self.phi.flat

    def _jump_rate(self, s: np.ndarray, b: np.ndarray, models: Models, tapered: bool = True) -> np.ndarray:
        m, a, phi = self.m, self.a, self.phi
        x = s[:, None] - b[None, :]                      # (k, n) elapsed times
        y = (1.0 + x) ** m
        S = y.sum(axis=1)
        n = b.size
        lam = models.arrival.rate(n) if n < models.N else 0.0
        up = _pow_diff_up(S, a)
        down = -_pow_diff_down(S[:, None], y, a)         # L(x^-i) - L(x)
        if tapered:
            La = S**a
            up = phi.diff((S + 1.0) ** a, La, up)
            Sm = np.maximum(S[:, None] - y, 0.0)
            down = phi.diff(Sm**a, La[:, None], down)
        h = models.hazard.hazard(x)
        return lam * up + np.sum(h * down, axis=1)

    def generator_integral(self, births, t0, t1, models):
        phi = self.phi
        if not births:
            lam0 = models.arrival.rate(0)
            return lam0 * (t1 - t0) * (phi.scalar(1.0) - phi.scalar(0.0))
        b = np.asarray(births, dtype=float)
        # ageing term integrates exactly along the flow
        drift = phi.scalar(L(t1 - b, self.m, self.a)) - phi.scalar(L(t0 - b, self.m, self.a))
        tapered = self.peak_after(births, t1) > phi.flat
        cuts = [t0, t1]
        for bp in models.hazard.breakpoints:
            cuts.extend(bi + bp for bi in b if t0 < bi + bp < t1)
        if len(cuts) > 2:
            cuts.sort()
        fun = lambda s: self._jump_rate(s, b, models, tapered)  # noqa: E731
        jump = sum(gauss_legendre(fun, lo, hi) for lo, hi in zip(cuts, cuts[1:]))
        return drift + jump


def catalogue(name: str, params: LyapunovParams | None = None, **kw) -> DynkinFunction:
    if name == "constant":
        return ConstantFunction(kw.get("c", 1.0))
    if name == "count":
        return CountFunction(kw.get("clip", 1000.0))
    if name == "lyapunov":
        if params is None:
            raise ContractViolation("lyapunov test function needs LyapunovParams")
        return LyapunovFunction(params.m, params.a, kw.get("flat", 1e4), kw.get("width"))
    raise ContractViolation(f"unsupported test function {name!r}")


def _dynkin_task(stream: Stream, payload):
    init, t, fs, models, mode = payload
    lg = simulate(init, t, mode, models, stream)
    x0 = np.asarray(init.elapsed)
    xt = np.asarray(lg.final.elapsed)
    out = []
    for f in fs:
        integ = 0.0
        peak = max(f.raw(x0), f.raw(xt))
        for s0, s1, births in lg.segments():
            integ += f.generator_integral(births, s0, s1, models)
            if births:
                peak = max(peak, f.peak_after(births, s1))
        out.append((f.value(xt) - f.value(x0) - integ, peak))
    return out


def dynkin_residuals(init: SystemState, t: float, fs, reps: int, models: Models, seed: int, mode: str = "residual",
                     level: float = 0.99, workers: int = 1) -> list[EstimateCI]:
    """Monte-Carlo E f(X_t) - f(x) - E int_0^t Gf(X_s) ds for several test functions on shared paths."""
    for f in fs:
        if not isinstance(f, DynkinFunction):
            raise ContractViolation(f"unsupported test function {f!r}")
    res = replicate(_dynkin_task, reps, seed, (init, t, list(fs), models, mode), workers)
    out = []
    for j, f in enumerate(fs):
        r = np.array([row[j][0] for row in res])
        peaks = np.array([row[j][1] for row in res])
        lim = f.flat_limit()
        frac_outside = float(np.mean(peaks > lim))
        if np.all(r == 0.0):
            est = EstimateCI(0.0, 0.0, 0.0, level, reps, "normal")
        else:
            est = mean_ci(r, level)
        out.append(EstimateCI(est.point, est.ci_lo, est.ci_hi, level, reps, "dynkin-residual",
                              {"function": f.name, "max_raw": float(peaks.max()), "frac_outside_flat": frac_outside,
                               "flat_limit": lim}))
    return out


def dynkin_residual(params: LyapunovParams | None, init: SystemState, t: float, f, reps: int, models: Models,
                    seed: int, mode: str = "residual", level: float = 0.99) -> EstimateCI:
    """Dynkin residual for one test function (instance or catalogue name)."""
    if isinstance(f, str):
        f = catalogue(f, params)
    return dynkin_residuals(init, t, [f], reps, models, seed, mode, level)[0]
