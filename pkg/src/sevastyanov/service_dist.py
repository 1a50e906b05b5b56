"""Service-time laws specified through their hazard rate (service intensity).

A law is described by ``h(t) = g(t) / (1 - G(t))`` with cumulative hazard
``H(t) = int_0^t h`` and survival ``S(t) = exp(-H(t)) = 1 - G(t)``.

Supported families:

* ``constant-rate``       h(t) = mu                          (exponential law)
* ``pareto-floor``        h(t) = C0 / (1 + t)                (S(t) = (1+t)^-C0)
* ``piecewise-constant``  h = levels[i] on [edges[i], edges[i+1]), last level extends to infinity
* ``tabulated``           H given on a grid and linearly interpolated (so h is
                          piecewise constant); extrapolated with the last slope
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FAMILIES = ("constant-rate", "pareto-floor", "piecewise-constant", "tabulated")


class DomainError(ValueError):
    """Negative time or otherwise out-of-domain argument."""


class InfiniteMeanError(ValueError):
    """The service law has a divergent mean."""


@dataclass(frozen=True)
class FloorReport:
    passed: bool
    margin: float
    infimum: float
    C0: float

    def to_dict(self):
        return {"passed": self.passed, "margin": self.margin, "infimum": self.infimum, "C0": self.C0}


@dataclass(frozen=True, eq=False)
class HazardModel:
    """Immutable service law.  Build through the ``constant_rate`` etc. helpers."""

    family: str
    params: dict
    hazard_sup: float = field(default=math.nan)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown hazard family {self.family!r}; expected one of {FAMILIES}")
        p = dict(self.params)
        if self.family == "constant-rate":
            mu = float(p["mu"])
            if not mu > 0:
                raise ValueError("constant-rate requires mu > 0")
            exact_sup = mu
            edges, levels = [0.0], [mu]
        elif self.family == "pareto-floor":
            c0 = float(p["C0"])
            if not c0 > 0:
                raise ValueError("pareto-floor requires C0 > 0")
            exact_sup = c0
            edges, levels = None, None
        elif self.family == "piecewise-constant":
            breaks = [float(b) for b in p.get("breakpoints", [])]
            levels = [float(v) for v in p["levels"]]
            if len(levels) != len(breaks) + 1:
                raise ValueError("piecewise-constant needs len(levels) == len(breakpoints) + 1")
            edges = [0.0] + breaks
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError("breakpoints must be strictly increasing and positive")
            if any(v < 0 for v in levels):
                raise ValueError("hazard levels must be non-negative")
            if levels[-1] <= 0:
                raise ValueError("last hazard level must be positive (proper service law)")
            exact_sup = max(levels)
        else:
            t = [float(v) for v in p["t"]]
            H = [float(v) for v in p["H"]]
            if len(t) != len(H) or len(t) < 2:
                raise ValueError("tabulated needs matching t and H columns with at least two rows")
            if t[0] != 0.0 or H[0] != 0.0:
                raise ValueError("tabulated grid must start at t=0 with H(0)=0")
            if any(b <= a for a, b in zip(t, t[1:])):
                raise ValueError("tabulated t must be strictly increasing")
            if any(b < a for a, b in zip(H, H[1:])):
                raise ValueError("tabulated H must be non-decreasing")
            edges = t[:-1]
            levels = [(H[i + 1] - H[i]) / (t[i + 1] - t[i]) for i in range(len(t) - 1)]
            if levels[-1] <= 0:
                raise ValueError("last tabulated slope must be positive (proper service law)")
            exact_sup = max(levels)
        sup = exact_sup if math.isnan(self.hazard_sup) else float(self.hazard_sup)
        if not sup >= exact_sup * (1 - 1e-15):
            raise ValueError(f"declared hazard_sup={sup} is below the true supremum {exact_sup}")
        object.__setattr__(self, "hazard_sup", sup)
        object.__setattr__(self, "params", p)
        if edges is not None:
            h_edge = [0.0]
            for i in range(len(edges) - 1):
                h_edge.append(h_edge[-1] + levels[i] * (edges[i + 1] - edges[i]))
            object.__setattr__(self, "_edges", edges)
            object.__setattr__(self, "_levels", levels)
            object.__setattr__(self, "_hedge", h_edge)

    # scalar fast paths --------------------------------------------------

    def h(self, t: float) -> float:
        """Hazard at a single non-negative time (no validation)."""
        if self.family == "pareto-floor":
            return self.params["C0"] / (1.0 + t)
        if self.family == "constant-rate":
            return self.params["mu"]
        return self._levels[bisect.bisect_right(self._edges, t) - 1]

    def H(self, t: float) -> float:
        if self.family == "pareto-floor":
            return self.params["C0"] * math.log1p(t)
        if self.family == "constant-rate":
            return self.params["mu"] * t
        i = bisect.bisect_right(self._edges, t) - 1
        return self._hedge[i] + self._levels[i] * (t - self._edges[i])

    def H_inv(self, y: float) -> float:
        """Smallest t with H(t) = y."""
        if y <= 0.0:
            return 0.0
        if self.family == "pareto-floor":
            return math.expm1(y / self.params["C0"])
        if self.family == "constant-rate":
            return y / self.params["mu"]
        i = bisect.bisect_right(self._hedge, y) - 1
        lev = self._levels[i]
        if lev == 0.0:
            return self._edges[i]
        return self._edges[i] + (y - self._hedge[i]) / lev

    @property
    def breakpoints(self) -> tuple:
        """Times where h may jump (empty for smooth families)."""
        if self.family in ("pareto-floor", "constant-rate"):
            return ()
        return tuple(self._edges[1:])

    # vectorised ----------------------------------------------------------

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "pareto-floor":
            return self.params["C0"] / (1.0 + t)
        if self.family == "constant-rate":
            return np.full_like(t, self.params["mu"])
        idx = np.searchsorted(self._edges, t, side="right") - 1
        return np.asarray(self._levels)[idx]

    def cumhaz(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "pareto-floor":
            return self.params["C0"] * np.log1p(t)
        if self.family == "constant-rate":
            return self.params["mu"] * t
        idx = np.searchsorted(self._edges, t, side="right") - 1
        e = np.asarray(self._edges)
        return np.asarray(self._hedge)[idx] + np.asarray(self._levels)[idx] * (t - e[idx])

    def cumhaz_inv(self, y):
        """Vectorised ``H_inv``: smallest t with H(t) = y (0 for y <= 0)."""
        y = np.maximum(np.asarray(y, dtype=float), 0.0)
        if self.family == "pareto-floor":
            return np.expm1(y / self.params["C0"])
        if self.family == "constant-rate":
            return y / self.params["mu"]
        he = np.asarray(self._hedge)
        idx = np.searchsorted(he, y, side="right") - 1
        lev = np.asarray(self._levels)[idx]
        e = np.asarray(self._edges)[idx]
        flat = lev == 0.0
        return np.where(flat, e, e + (y - he[idx]) / np.where(flat, 1.0, lev))

    def integrated_survival(self, x: float) -> float:
        """int_0^x S(u) du."""
        if self.family == "pareto-floor":
            c0 = self.params["C0"]
            if c0 == 1.0:
                return math.log1p(x)
            return -math.expm1((1.0 - c0) * math.log1p(x)) / (c0 - 1.0)
        if self.family == "constant-rate":
            mu = self.params["mu"]
            return -math.expm1(-mu * x) / mu
        total = 0.0
        edges, levels, hedge = self._edges, self._levels, self._hedge
        for i, e in enumerate(edges):
            if x <= e:
                break
            right = edges[i + 1] if i + 1 < len(edges) else math.inf
            w = min(x, right) - e
            total += _segment_integral(hedge[i], levels[i], w)
        return total

    def equilibrium_inv(self, v: float) -> float:
        """Quantile of the stationary-excess law with density S(x)/mean."""
        if self.family == "pareto-floor":
            c0 = self.params["C0"]
            return math.expm1(-math.log1p(-v) / (c0 - 1.0))
        if self.family == "constant-rate":
            return -math.log1p(-v) / self.params["mu"]
        target = v * mean_service(self)
        edges, levels, hedge = self._edges, self._levels, self._hedge
        acc = 0.0
        for i, e in enumerate(edges):
            right = edges[i + 1] if i + 1 < len(edges) else math.inf
            seg = _segment_integral(hedge[i], levels[i], right - e)
            if acc + seg >= target or i == len(edges) - 1:
                r = target - acc
                lev = levels[i]
                if lev == 0.0:
                    return e + r * math.exp(hedge[i])
                arg = 1.0 - r * lev * math.exp(hedge[i])
                return e - math.log(max(arg, 1e-300)) / lev
            acc += seg
        raise AssertionError("unreachable")

    def floor_infimum(self) -> float:
        """inf over t >= 0 of (1+t) h(t)."""
        if self.family == "pareto-floor":
            return self.params["C0"]
        if self.family == "constant-rate":
            return self.params["mu"]
        return min((1.0 + e) * lev for e, lev in zip(self._edges, self._levels))

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.params, "hazard_sup": self.hazard_sup}


def _segment_integral(h0: float, level: float, width: float) -> float:
    # int_0^width exp(-(h0 + level*u)) du
    if math.isinf(width):
        return math.exp(-h0) / level if level > 0 else math.inf
    if level == 0.0:
        return width * math.exp(-h0)
    return math.exp(-h0) * -math.expm1(-level * width) / level


# constructors ---------------------------------------------------------------


def constant_rate(mu: float, hazard_sup: float | None = None) -> HazardModel:
    return HazardModel("constant-rate", {"mu": mu}, math.nan if hazard_sup is None else hazard_sup)


def pareto_floor(C0: float, hazard_sup: float | None = None) -> HazardModel:
    return HazardModel("pareto-floor", {"C0": C0}, math.nan if hazard_sup is None else hazard_sup)


def piecewise_constant(breakpoints, levels, hazard_sup: float | None = None) -> HazardModel:
    return HazardModel(
        "piecewise-constant",
        {"breakpoints": list(breakpoints), "levels": list(levels)},
        math.nan if hazard_sup is None else hazard_sup,
    )


def tabulated(t, H, hazard_sup: float | None = None) -> HazardModel:
    return HazardModel("tabulated", {"t": list(t), "H": list(H)}, math.nan if hazard_sup is None else hazard_sup)


def tabulated_from_csv(path, hazard_sup: float | None = None) -> HazardModel:
    """Read a two-column ``t,H`` CSV (header optional)."""
    ts, hs = [], []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                t, h = float(row[0]), float(row[1])
            except ValueError:
                continue  # header
            ts.append(t)
            hs.append(h)
    return tabulated(ts, hs, hazard_sup)


def from_spec(spec: dict) -> HazardModel:
    """Build a model from a config mapping ``{family: ..., params: {...}}``."""
    family = spec["family"]
    params = dict(spec.get("params", {}))
    sup = spec.get("hazard_sup")
    if family == "tabulated" and "csv" in params:
        return tabulated_from_csv(params["csv"], sup)
    return HazardModel(family, params, math.nan if sup is None else float(sup))


# operations -------------------------------------------------------------------


def _check_t(t):
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("time must be non-negative")


def cumulative_hazard(model: HazardModel, t):
    """H(t) = int_0^t h(s) ds."""
    _check_t(t)
    if np.ndim(t) == 0:
        return model.H(float(t))
    return model.cumhaz(t)


def survival(model: HazardModel, t):
    """S(t) = exp(-H(t)) = 1 - G(t)."""
    _check_t(t)
    if np.ndim(t) == 0:
        return math.exp(-model.H(float(t)))
    return np.exp(-model.cumhaz(t))


def mean_service(model: HazardModel) -> float:
    """Mean service time int_0^inf S(t) dt."""
    if model.family == "pareto-floor":
        c0 = model.params["C0"]
        if c0 <= 1.0:
            raise InfiniteMeanError(f"pareto-floor with C0={c0} <= 1 has infinite mean")
        return 1.0 / (c0 - 1.0)
    if model.family == "constant-rate":
        return 1.0 / model.params["mu"]
    return model.integrated_survival(math.inf)


def sample_service(model: HazardModel, rng, elapsed: float = 0.0) -> float:
    """Inverse-transform draw of a service time.

    With ``elapsed > 0`` the draw is conditioned on the service exceeding
    ``elapsed`` (the full length is returned, not the residual).
    """
    from .rng import as_stream

    u = as_stream(rng).uniform()
    return service_from_uniform(model, u, elapsed)


def service_from_uniform(model: HazardModel, u: float, elapsed: float = 0.0) -> float:
    """Solve S(t)/S(elapsed) = u for t."""
    base = model.H(elapsed) if elapsed > 0.0 else 0.0
    return model.H_inv(base - math.log(u))


def check_hazard_floor(model: HazardModel, C0: float) -> FloorReport:
    """Check h(t) >= C0/(1+t) for all t; margin is inf (1+t)h(t) - C0."""
    if not C0 > 0:
        raise ValueError("C0 must be positive")
    inf = model.floor_infimum()
    margin = inf - C0
    return FloorReport(passed=margin >= 0.0, margin=margin, infimum=inf, C0=C0)
