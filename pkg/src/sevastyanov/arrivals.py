"""State-dependent conditionally-Poisson arrival intensities lambda_n."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

FAMILIES = ("constant", "linear", "capped-table")
TAIL_RULES = ("last", "zero", "power")


class InfiniteLambdaError(ValueError):
    """sup_n lambda_n / n is infinite."""


@dataclass(frozen=True, eq=False)
class ArrivalModel:
    """Arrival intensities.

    ``constant``: lambda_n = lam.  ``linear``: lambda_n = c (n + 1).
    ``capped-table``: the table lists lambda_1, ..., lambda_K; beyond K the
    tail rule applies: ``last`` repeats the final entry, ``zero`` stops
    arrivals, ``power`` uses c (n + 1)^p.  lambda_0 is ``lambda0`` when given
    and otherwise equals the first entry.

    ``lambda0`` overrides lambda_0 for every family.  ``allow_trivial`` admits
    lambda_0 = 0 (the degenerate regime with stationary law at the empty state).
    """

    family: str
    params: dict
    lambda0: float | None = None
    allow_trivial: bool = False
    _table: tuple = field(default=(), init=False, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown arrival family {self.family!r}")
        p = dict(self.params)
        if self.family == "constant":
            if float(p["lam"]) < 0:
                raise ValueError("lam must be non-negative")
        elif self.family == "linear":
            if float(p["c"]) < 0:
                raise ValueError("c must be non-negative")
        else:
            table = tuple(float(v) for v in p["table"])
            if not table or any(v < 0 for v in table):
                raise ValueError("capped-table needs a non-empty non-negative table")
            tail = p.get("tail", "last")
            if tail not in TAIL_RULES:
                raise ValueError(f"unknown tail rule {tail!r}")
            if tail == "power" and (float(p["c"]) < 0 or "p" not in p):
                raise ValueError("power tail needs c >= 0 and exponent p")
            p["tail"] = tail
            object.__setattr__(self, "_table", table)
        object.__setattr__(self, "params", p)
        if self.lambda0 is not None and self.lambda0 < 0:
            raise ValueError("lambda0 must be non-negative")
        if self.rate(0) <= 0 and not self.allow_trivial:
            raise ValueError("lambda_0 must be positive unless allow_trivial is set")

    def rate(self, n: int) -> float:
        if n == 0 and self.lambda0 is not None:
            return self.lambda0
        fam = self.family
        if fam == "constant":
            return self.params["lam"]
        if fam == "linear":
            return self.params["c"] * (n + 1)
        table = self._table
        if n == 0:
            return table[0]
        if n <= len(table):
            return table[n - 1]
        tail = self.params["tail"]
        if tail == "last":
            return table[-1]
        if tail == "zero":
            return 0.0
        return self.params["c"] * (n + 1) ** self.params["p"]

    @property
    def lam0(self) -> float:
        return self.rate(0)

    def tail_ratio_sup(self, k: int) -> float:
        """sup over j >= k of lambda_j / (j + 1); used to bound pmf tails."""
        fam = self.family
        if fam == "constant":
            return self.rate(k) / (k + 1) if k > 0 else max(self.rate(0), self.params["lam"] / 2)
        if fam == "linear":
            return self.params["c"] if k > 0 or self.lambda0 is None else max(self.lambda0, self.params["c"])
        table = self._table
        best = max((self.rate(j) / (j + 1) for j in range(k, len(table) + 1)), default=0.0)
        j0 = max(k, len(table) + 1)
        tail = self.params["tail"]
        if tail == "last":
            best = max(best, table[-1] / (j0 + 1))
        elif tail == "power":
            c, pw = self.params["c"], self.params["p"]
            if pw > 0:
                best = max(best, math.inf if pw > 1 else c * (j0 + 1) ** (pw - 1))
            else:
                best = max(best, c * (j0 + 1) ** (pw - 1))
        return best

    def limsup_ratio(self) -> float:
        """limsup_n lambda_n / (n + 1)."""
        if self.family == "constant":
            return 0.0
        if self.family == "linear":
            return self.params["c"]
        tail = self.params["tail"]
        if tail in ("last", "zero"):
            return 0.0
        pw = self.params["p"]
        if pw > 1:
            return math.inf
        return self.params["c"] if pw == 1 else 0.0

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.params, "lambda0": self.lambda0}


def constant(lam: float, lambda0: float | None = None, allow_trivial: bool = False) -> ArrivalModel:
    return ArrivalModel("constant", {"lam": lam}, lambda0, allow_trivial or lam == 0)


def linear(c: float, lambda0: float | None = None, allow_trivial: bool = False) -> ArrivalModel:
    return ArrivalModel("linear", {"c": c}, lambda0, allow_trivial)


def capped_table(table, tail: str = "last", lambda0: float | None = None, allow_trivial: bool = False, **tail_params) -> ArrivalModel:
    return ArrivalModel("capped-table", {"table": list(table), "tail": tail, **tail_params}, lambda0, allow_trivial)


def from_spec(spec: dict) -> ArrivalModel:
    lam0 = spec.get("lambda0")
    return ArrivalModel(
        spec["family"],
        dict(spec.get("params", {})),
        None if lam0 is None else float(lam0),
        bool(spec.get("allow_trivial", False)),
    )


def rate(model: ArrivalModel, n: int) -> float:
    """lambda_n."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return model.rate(n)


def lambda_bar(model: ArrivalModel) -> float:
    """Exact Lambda = sup_{n >= 1} lambda_n / n."""
    fam = model.family
    if fam == "constant":
        return model.params["lam"]
    if fam == "linear":
        return 2.0 * model.params["c"]
    table = model._table
    best = max(table[n - 1] / n for n in range(1, len(table) + 1))
    j0 = len(table) + 1
    tail = model.params["tail"]
    if tail == "last":
        best = max(best, table[-1] / j0)
    elif tail == "power":
        c, pw = model.params["c"], model.params["p"]
        if pw > 1 and c > 0:
            raise InfiniteLambdaError(f"power tail with exponent {pw} > 1 makes lambda_n/n unbounded")
        # (n+1)^p / n is decreasing in n for p <= 1, so the first tail index dominates
        best = max(best, c * (j0 + 1) ** pw / j0)
    return best


def stability_check(model: ArrivalModel, mean_service: float) -> dict:
    """N = infinity stability: mean_service * limsup lambda_n/(n+1) < 1.

    Failure is logged as a warning and reported; callers decide whether to stop.
    """
    value = mean_service * model.limsup_ratio()
    ok = value < 1.0
    if not ok:
        log.warning("stability condition fails: q^-1 * limsup lambda_n/(n+1) = %.4g >= 1", value)
    return {"passed": ok, "value": value}
