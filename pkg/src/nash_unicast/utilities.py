"""Parametric user utilities: value, derivative, closed-form demand, payoff.

Four families, all with U(0) = 0 and U increasing:

* ``log``      U(x) = a*ln(1+x)                      concave
* ``power``    U(x) = a*x**theta, 0 < theta < 1      concave
* ``quadcap``  U(x) = a*x - b*x**2 up to its peak at a/(2b), constant beyond
* ``sigmoid``  U(x) = a*x**2/(s + x**2)              quasi-concave, not concave

Value and derivative accept scalars or numpy arrays elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

CONCAVE_FAMILIES = ("log", "power", "quadcap")
FAMILIES = CONCAVE_FAMILIES + ("sigmoid",)


class UtilityError(ValueError):
    pass


class NegativeRate(UtilityError):
    pass


@dataclass(frozen=True)
class UtilitySpec:
    family: str
    a: float
    b: float = 0.0  # theta for power, b for quadcap, s for sigmoid; unused for log

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UtilityError(f"unknown utility family {self.family!r}")
        if not self.a > 0.0:
            raise UtilityError(f"{self.family}: parameter a must be positive, got {self.a}")
        if self.family == "power" and not 0.0 < self.b < 1.0:
            raise UtilityError(f"power: theta must lie in (0, 1), got {self.b}")
        if self.family in ("quadcap", "sigmoid") and not self.b > 0.0:
            raise UtilityError(f"{self.family}: second parameter must be positive, got {self.b}")

    @property
    def is_concave(self) -> bool:
        return self.family in CONCAVE_FAMILIES

    def to_dict(self) -> dict:
        names = {"log": ("a",), "power": ("a", "theta"), "quadcap": ("a", "b"), "sigmoid": ("a", "s")}
        params = dict(zip(names[self.family], (self.a, self.b)))
        return {"family": self.family, "params": params}

    @staticmethod
    def from_dict(data: Mapping) -> "UtilitySpec":
        family = data["family"]
        params = dict(data["params"])
        if family == "log":
            return log_utility(**params)
        if family == "power":
            return power_utility(**params)
        if family == "quadcap":
            return quad_cap_utility(**params)
        if family == "sigmoid":
            return sigmoid_utility(**params)
        raise UtilityError(f"unknown utility family {family!r}")


def log_utility(a: float) -> UtilitySpec:
    return UtilitySpec("log", float(a))


def power_utility(a: float, theta: float) -> UtilitySpec:
    return UtilitySpec("power", float(a), float(theta))


def quad_cap_utility(a: float, b: float) -> UtilitySpec:
    return UtilitySpec("quadcap", float(a), float(b))


def sigmoid_utility(a: float, s: float) -> UtilitySpec:
    return UtilitySpec("sigmoid", float(a), float(s))


def _check_rate(x) -> None:
    if np.any(np.asarray(x) < 0):
        raise NegativeRate(f"rate must be non-negative, got {x}")


def value(u: UtilitySpec, x):
    """U(x), elementwise on arrays."""
    _check_rate(x)
    if u.family == "log":
        return u.a * np.log1p(x)
    if u.family == "power":
        return u.a * np.power(x, u.b)
    if u.family == "quadcap":
        xm = np.minimum(x, u.a / (2.0 * u.b))
        return u.a * xm - u.b * xm * xm
    x2 = np.square(x)
    return u.a * x2 / (u.b + x2)


def derivative(u: UtilitySpec, x):
    """dU/dx, elementwise on arrays. Power utilities have infinite slope at 0."""
    _check_rate(x)
    xa = np.asarray(x, dtype=float)
    if u.family == "log":
        return (u.a / (1.0 + xa))[()]
    if u.family == "power":
        with np.errstate(divide="ignore"):
            return (u.a * u.b * np.power(xa, u.b - 1.0))[()]
    if u.family == "quadcap":
        return np.where(xa < u.a / (2.0 * u.b), u.a - 2.0 * u.b * xa, 0.0)[()]
    return (2.0 * u.a * u.b * xa / np.square(u.b + xa * xa))[()]


def initial_slope(u: UtilitySpec, fallback_rate: float = 1e-3) -> float:
    """Steepest marginal utility, the natural price scale of a user.

    At zero for the concave families, except that power utilities (infinite
    slope at 0) report the slope at ``fallback_rate``. Sigmoid marginals peak
    at the inflection point sqrt(s/3) rather than at zero.
    """
    if u.family == "power":
        return float(derivative(u, fallback_rate))
    if u.family == "sigmoid":
        return float(derivative(u, math.sqrt(u.b / 3.0)))
    return float(derivative(u, 0.0))


def demand(u: UtilitySpec, price: float, cap: float) -> float:
    """argmax of U(x) - price*x over [0, cap].

    Closed form for the concave families; plateau ties (quadcap at price 0)
    resolve to the smallest maximizer. The sigmoid objective can be bimodal,
    so it is solved by a coarse scan plus golden-section refinement and an
    endpoint comparison.
    """
    if cap < 0:
        raise UtilityError(f"cap must be non-negative, got {cap}")
    if price < 0:
        raise UtilityError(f"price must be non-negative, got {price}")
    if cap == 0.0:
        return 0.0
    if u.family == "log":
        if price == 0.0:
            return cap
        return min(max(u.a / price - 1.0, 0.0), cap)
    if u.family == "power":
        if price == 0.0:
            return cap
        ratio = u.a * u.b / price
        if math.log(ratio) / (1.0 - u.b) > 700.0:  # would overflow; far beyond any cap
            return cap
        return min(ratio ** (1.0 / (1.0 - u.b)), cap)
    if u.family == "quadcap":
        if price >= u.a:
            return 0.0
        return min((u.a - price) / (2.0 * u.b), cap)
    return _sigmoid_demand(u, price, cap)


def _sigmoid_demand(u: UtilitySpec, price: float, cap: float) -> float:
    if price == 0.0:
        return cap

    def f(x):
        return u.a * x * x / (u.b + x * x) - price * x

    # Coarse scan locates the best bracket; golden-section refines it.
    grid = np.linspace(0.0, cap, 65)
    vals = [f(x) for x in grid]
    k = int(np.argmax(vals))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > 1e-10:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
    best = 0.5 * (lo + hi)
    candidates = [0.0, cap, best]
    return min(candidates, key=lambda x: (-f(x), x))


def payoff(u: UtilitySpec, x: float, tax: float) -> float:
    """Quasi-linear payoff U(x) - tax; a negative tax is a subsidy."""
    return float(value(u, x)) - tax
