"""Admissible parameter certificates for the polynomial convergence bound.

A certificate is a tuple (m, a, k, ell, epsilon, R) for a scenario (C0, Lambda,
lambda0) with strictly positive slack in

    (nondeg)    lambda0 > 0
    (aslambda)  C0 > 2 (1 + 2 Lambda)
    (am)        C0 > (a + (k v 1)/m) (m + Lambda 2^(a - 1 + (k v 1)/m))
    (encore1)   C0 - Lambda a 2^(a-1) - m a > 0
    (encore2)   C0 - eps > a' (m + Lambda 2^(a'-1)),  a' = a + ell/m
    (eqR)       (C_{m,Lambda,a} - eps) R > lambda0

The search maximises the (am) slack over (m, a) on a refining log grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

GRID = 64
M_MAX = A_MAX = 64.0
K_TOL = 1e-3
K_CEILING = 1e3


class InfeasibleCertificate(ValueError):
    def __init__(self, msg: str, best_margin: float = -math.inf):
        super().__init__(msg)
        self.best_margin = best_margin


@dataclass(frozen=True)
class BaseReport:
    passed: bool
    nondeg: float
    aslambda: float
    note: str = ""

    def to_dict(self):
        return asdict(self)


def check_base(C0: float, Lambda: float, lambda0: float) -> BaseReport:
    """(nondeg) and (aslambda) with their slacks; both strict."""
    for v in (C0, Lambda, lambda0):
        if not math.isfinite(v):
            raise ValueError("inputs must be finite")
    s_as = C0 - 2.0 * (1.0 + 2.0 * Lambda)
    note = ""
    if not lambda0 > 0:
        note = "lambda0 = 0: trivial regime, the empty state is absorbing and the stationary law is its point mass"
    return BaseReport(bool(lambda0 > 0 and s_as > 0), float(lambda0), float(s_as), note)


def am_rhs(Lambda, m, a, k):
    kk = np.maximum(k, 1.0)
    return (a + kk / m) * (m + Lambda * np.exp2(a - 1.0 + kk / m))


def check_am(C0: float, Lambda: float, m, a, k) -> float:
    """C0 minus the right side of (am); positive means the condition holds."""
    return C0 - am_rhs(Lambda, m, a, k)


def encore1_slack(C0, Lambda, m, a):
    return C0 - Lambda * a * 2.0 ** (a - 1.0) - m * a


def encore2_slack(C0, Lambda, m, a, ell):
    """C0 - a'(m + Lambda 2^(a'-1)) with a' = a + ell/m (before subtracting epsilon)."""
    ap = a + ell / m
    return C0 - ap * (m + Lambda * 2.0 ** (ap - 1.0))


@dataclass(frozen=True)
class Certificate:
    C0: float
    Lambda: float
    lambda0: float
    m: float
    a: float
    k: float
    ell: float
    epsilon: float
    R: float
    margins: dict = field(default_factory=dict)

    @property
    def drift_constant(self) -> float:
        return encore1_slack(self.C0, self.Lambda, self.m, self.a)

    @property
    def delta(self) -> float:
        return self.ell - self.k

    def to_dict(self) -> dict:
        d = asdict(self)
        d["drift_constant"] = self.drift_constant
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def margin_table(self) -> str:
        rows = [f"{'condition':<10} {'slack':>14}"]
        rows += [f"{k:<10} {v:>14.6g}" for k, v in self.margins.items()]
        return "\n".join(rows)


def certificate_margins(C0, Lambda, lambda0, m, a, k, ell, epsilon, R) -> dict:
    """Re-evaluate every inequality from scratch."""
    c = encore1_slack(C0, Lambda, m, a)
    return {
        "nondeg": lambda0,
        "aslambda": C0 - 2.0 * (1.0 + 2.0 * Lambda),
        "am": float(check_am(C0, Lambda, m, a, k)),
        "encore1": c,
        "encore2": encore2_slack(C0, Lambda, m, a, ell) - epsilon,
        "eqR": (c - epsilon) * R - lambda0,
        "m": m - 1.0,
        "a": a - 1.0,
        "k": k,
        "delta": ell - k,
        "epsilon": epsilon,
        "R": R,
    }


def revalidate(cert: Certificate, allow_trivial: bool = False) -> dict:
    """Independent re-check; returns ``{"passed": bool, "margins": ...}``."""
    mg = certificate_margins(cert.C0, cert.Lambda, cert.lambda0, cert.m, cert.a, cert.k, cert.ell, cert.epsilon,
                             cert.R)
    skip = {"nondeg"} if allow_trivial else set()
    ok = all(v > 0 for key, v in mg.items() if key not in skip)
    return {"passed": bool(ok), "margins": mg}


# search ---------------------------------------------------------------------------------


def _best_ma(C0, Lambda, k, m_max=M_MAX, a_max=A_MAX, grid=GRID, refinements=2):
    """Maximise the (am) slack over (m, a) in (1, m_max] x (1, a_max]."""
    # log-spaced offsets above 1
    lo_m, hi_m = math.log(1e-3), math.log(m_max - 1.0)
    lo_a, hi_a = math.log(1e-3), math.log(a_max - 1.0)
    best = (-math.inf, 2.0, 2.0)
    for _ in range(refinements + 1):
        um = np.linspace(lo_m, hi_m, grid)
        ua = np.linspace(lo_a, hi_a, grid)
        M = 1.0 + np.exp(um)[:, None]
        A = 1.0 + np.exp(ua)[None, :]
        with np.errstate(over="ignore"):
            slack = check_am(C0, Lambda, M, A, k)
        i, j = np.unravel_index(int(np.argmax(slack)), slack.shape)
        if slack[i, j] > best[0]:
            best = (float(slack[i, j]), float(M[i, 0]), float(A[0, j]))
        # zoom to the neighbouring cells
        dm, da = (hi_m - lo_m) / (grid - 1), (hi_a - lo_a) / (grid - 1)
        cm, ca = um[i], ua[j]
        lo_m, hi_m = max(cm - 2 * dm, math.log(1e-6)), min(cm + 2 * dm, math.log(m_max - 1.0))
        lo_a, hi_a = max(ca - 2 * da, math.log(1e-6)), min(ca + 2 * da, math.log(a_max - 1.0))
    return best


def _assemble(C0, Lambda, lambda0, k, m, a, allow_trivial) -> Certificate:
    delta = min(0.1, k / 2.0)
    while encore2_slack(C0, Lambda, m, a, k + delta) <= 0:
        delta /= 2.0
        if delta < 1e-12:
            raise InfeasibleCertificate("no admissible ell > k for (encore2)", float(check_am(C0, Lambda, m, a, k)))
    ell = k + delta
    eps = 0.5 * encore2_slack(C0, Lambda, m, a, ell)
    c = encore1_slack(C0, Lambda, m, a)
    if not c - eps > 0:
        raise InfeasibleCertificate("drift constant does not exceed epsilon", c - eps)
    R = 2.0 * lambda0 / (c - eps) if lambda0 > 0 else 1.0
    mg = certificate_margins(C0, Lambda, lambda0, m, a, k, ell, eps, R)
    if lambda0 == 0 and allow_trivial:
        mg["eqR"] = (c - eps) * R  # nothing to compensate in the trivial regime
    return Certificate(C0, Lambda, lambda0, m, a, k, ell, eps, R, mg)


def search_certificate(C0: float, Lambda: float, lambda0: float, target_k="max", allow_trivial: bool = False,
                       m_max: float = M_MAX, a_max: float = A_MAX) -> Certificate:
    """Find (m, a, k, ell, epsilon, R) satisfying every condition strictly.

    ``target_k`` is a positive number or ``"max"``; for ``"max"`` the largest
    feasible k is located by bracketing and bisection to ``K_TOL``.
    """
    base = check_base(C0, Lambda, lambda0)
    if base.aslambda <= 0:
        raise InfeasibleCertificate(f"C0 > 2(1 + 2 Lambda) fails (slack {base.aslambda:.6g})", base.aslambda)
    if not lambda0 > 0 and not allow_trivial:
        raise InfeasibleCertificate("lambda0 must be positive (set allow_trivial for the degenerate regime)", lambda0)

    def feasible(k):
        s, m, a = _best_ma(C0, Lambda, k, m_max, a_max)
        return s > 0, s, m, a

    if target_k == "max":
        ok, s, m, a = feasible(1.0)
        if not ok:
            raise InfeasibleCertificate("(am) infeasible for every k", s)
        lo, hi = 1.0, 2.0
        while feasible(hi)[0]:
            lo, hi = hi, 2.0 * hi
            if hi > K_CEILING:
                raise InfeasibleCertificate("k unbounded below the ceiling; check the inputs", math.inf)
        while hi - lo > K_TOL:
            mid = 0.5 * (lo + hi)
            if feasible(mid)[0]:
                lo = mid
            else:
                hi = mid
        k = lo
    else:
        k = float(target_k)
        if not k > 0:
            raise ValueError("target k must be positive")
    ok, s, m, a = feasible(k)
    if not ok:
        raise InfeasibleCertificate(f"(am) infeasible at k={k:g}; best slack {s:.6g}", s)
    return _assemble(C0, Lambda, lambda0, k, m, a, allow_trivial)


def certificate_for(models, target_k="max", C0: float | None = None) -> Certificate:
    """Certificate for concrete models: C0 defaults to the hazard floor, Lambda to the exact sup."""
    from .arrivals import lambda_bar

    c0 = models.hazard.floor_infimum() if C0 is None else C0
    return search_certificate(c0, lambda_bar(models.arrival), models.arrival.rate(0), target_k,
                              models.arrival.allow_trivial)
