"""Centralized welfare maximization and its KKT certificate.

Maximizes the sum of concave utilities subject to per-link capacities and
non-negative rates. Solved in the dual: a diminishing-step subgradient pass
on the link prices first, then cyclic per-link market clearing by bisection
until every KKT residual (stationarity, feasibility both ways, and both
complementary-slackness families) sits below the configured tolerance. The
multipliers double as the equilibrium link prices downstream.

Also provides an independent brute-force grid oracle for small instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from .network import BOUNDARY_TOL, Network, min_route_capacity
from .utilities import UtilitySpec, demand, derivative, value


class SolverError(RuntimeError):
    pass


class NotConverged(SolverError):
    pass


class NonConcaveUtility(SolverError):
    pass


class GridTooLarge(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-8
    max_iterations: int = 200000
    step_a: float | None = None  # default 1 / (largest link group)
    step_b: float = 10.0

    def __post_init__(self):
        if not self.tolerance > 0.0:
            raise SolverError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise SolverError("max_iterations must be at least 1")


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal: float
    dual: float
    complementarity_links: float
    complementarity_users: float

    @property
    def max_violation(self) -> float:
        return max(
            self.stationarity,
            self.primal,
            self.dual,
            self.complementarity_links,
            self.complementarity_users,
        )


@dataclass(frozen=True)
class SolveResult:
    rates: Dict[int, float]
    lambdas: Dict[int, float]
    nus: Dict[int, float]
    objective: float
    kkt_residual: float
    iterations: int


def welfare(utilities: Mapping[int, UtilitySpec], rates: Mapping[int, float]) -> float:
    return sum(float(value(utilities[i], rates[i])) for i in utilities)


def kkt_residuals(
    net: Network,
    utilities: Mapping[int, UtilitySpec],
    rates: Mapping[int, float],
    lambdas: Mapping[int, float],
    nus: Mapping[int, float],
) -> KktResiduals:
    """Largest absolute violation of each optimality condition for a candidate
    (rates, link multipliers, non-negativity multipliers) triple."""
    stationarity = 0.0
    primal = 0.0
    dual = 0.0
    slack_links = 0.0
    slack_users = 0.0
    for i in net.users():
        x = rates[i]
        price = sum(lambdas[l] for l in net.route(i))
        stationarity = max(stationarity, abs(float(derivative(utilities[i], max(x, 0.0))) - price + nus[i]))
        primal = max(primal, -x)
        dual = max(dual, -nus[i])
        slack_users = max(slack_users, abs(nus[i] * x))
    for l in net.links():
        load = sum(rates[u] for u in net.group(l))
        primal = max(primal, load - net.capacity(l))
        dual = max(dual, -lambdas[l])
        slack_links = max(slack_links, abs(lambdas[l] * (load - net.capacity(l))))
    return KktResiduals(stationarity, max(primal, 0.0), max(dual, 0.0), slack_links, slack_users)


def _recover_nus(net, utilities, rates, prices) -> Dict[int, float]:
    """Non-negativity multipliers: the price gap at users stuck at zero."""
    nus = {}
    for i in net.users():
        if rates[i] <= 1e-12:
            slope = float(derivative(utilities[i], 0.0))
            gap = prices[i] - slope if math.isfinite(slope) else 0.0
            nus[i] = max(0.0, gap)
        else:
            nus[i] = 0.0
    return nus


def solve_centralized(
    net: Network,
    utilities: Mapping[int, UtilitySpec],
    config: SolverConfig | None = None,
) -> SolveResult:
    """Solve the capacity-constrained welfare problem to KKT tolerance.

    Raises NonConcaveUtility for sigmoid users and NotConverged if the
    residual target is still unmet when the iteration budget runs out.
    Bit-for-bit deterministic for a fixed configuration.
    """
    config = config or SolverConfig()
    for i in net.users():
        if not utilities[i].is_concave:
            raise NonConcaveUtility(f"user {i} has a non-concave ({utilities[i].family}) utility")

    users = list(net.users())
    links = list(net.links())
    caps = {i: min_route_capacity(net, i) for i in users}
    # Loose boxes for the clearing phase: a capped demand hides the price at
    # which a lone binding user's first-order condition actually holds.
    big_caps = {i: 10.0 * caps[i] + 10.0 for i in users}
    lam = {l: 0.0 for l in links}
    max_degree = max((len(net.group(l)) for l in links), default=1)
    step_a = config.step_a if config.step_a is not None else 1.0 / max(max_degree, 1)

    def primal_at(lam_map, boxes):
        rates = {}
        prices = {}
        for i in users:
            prices[i] = sum(lam_map[l] for l in net.route(i))
            rates[i] = demand(utilities[i], prices[i], boxes[i])
        return rates, prices

    # Allocations feed the tax machinery, whose overload indicators trip at
    # the feasibility boundary; capacity violations must clear a far tighter
    # bar than the other residuals or constructed equilibria get penalized.
    primal_target = min(config.tolerance, 0.5 * BOUNDARY_TOL)

    def certified(lam_map, iterations):
        rates, prices = primal_at(lam_map, caps)
        nus = _recover_nus(net, utilities, rates, prices)
        rep = kkt_residuals(net, utilities, rates, lam_map, nus)
        if rep.max_violation <= config.tolerance and rep.primal <= primal_target:
            return SolveResult(
                rates=rates,
                lambdas=dict(lam_map),
                nus=nus,
                objective=welfare(utilities, rates),
                kkt_residual=rep.max_violation,
                iterations=iterations,
            )
        return rep

    iterations = 0
    best = math.inf
    phase1 = min(300, config.max_iterations)
    for k in range(phase1):
        iterations += 1
        out = certified(lam, iterations)
        if isinstance(out, SolveResult):
            return out
        best = min(best, out.max_violation)
        rates, _ = primal_at(lam, caps)
        for l in links:
            load = sum(rates[u] for u in net.group(l))
            lam[l] = max(0.0, lam[l] + step_a / (config.step_b + k) * (load - net.capacity(l)))

    # Cyclic clearing: for each link in turn, bisect its price so the group
    # demand meets capacity exactly (or drop the price to zero if slack).
    rounds = min(400, max(0, config.max_iterations - phase1))
    for _ in range(rounds):
        for l in links:
            group = net.group(l)
            if not group:
                lam[l] = 0.0
                continue
            cap_l = net.capacity(l)
            base = {i: sum(lam[m] for m in net.route(i) if m != l) for i in group}

            def load_at(v):
                return sum(demand(utilities[i], base[i] + v, big_caps[i]) for i in group)

            if load_at(0.0) <= cap_l:
                lam[l] = 0.0
                continue
            hi = max(2.0 * lam[l], 1.0)
            for _ in range(200):
                if load_at(hi) <= cap_l:
                    break
                hi *= 2.0
            lo = 0.0
            for _ in range(200):
                if hi - lo <= 1e-16 * (1.0 + hi):
                    break
                mid = 0.5 * (lo + hi)
                if load_at(mid) > cap_l:
                    lo = mid
                else:
                    hi = mid
            lam[l] = hi
        iterations += 1
        out = certified(lam, iterations)
        if isinstance(out, SolveResult):
            return out
        best = min(best, out.max_violation)

    raise NotConverged(
        f"KKT residual {best:.3e} still above tolerance {config.tolerance:.1e} "
        f"after {iterations} iterations"
    )


def brute_force_centralized(
    net: Network,
    utilities: Mapping[int, UtilitySpec],
    grid_step: float,
) -> Dict[int, float]:
    """Exhaustive grid search over feasible rate vectors; the independent
    oracle for the dual solver.

    Every user's axis is {0, h, 2h, ...} up to its route cap. The last user
    is closed in O(1) per point via running maxima of its utility, so the
    enumerated work is the product of the remaining axes; that product is
    guarded at 1e8 combinations.
    """
    if not grid_step > 0.0:
        raise SolverError(f"grid_step must be positive, got {grid_step}")
    users = list(net.users())
    h = grid_step
    axes = []
    for i in users:
        npts = int(math.floor(min_route_capacity(net, i) / h + 1e-9)) + 1
        axes.append(np.arange(npts) * h)
    work = 1
    for ax in axes[:-1]:
        work *= len(ax)
    if work > 1e8:
        raise GridTooLarge(f"{work:.2e} grid combinations exceed the 1e8 guard")

    last = users[-1]
    u_last = np.asarray(value(utilities[last], axes[-1]), dtype=float)
    prefix_best = np.maximum.accumulate(u_last)
    shifted = np.concatenate(([-np.inf], prefix_best[:-1]))
    prefix_arg = np.maximum.accumulate(np.where(u_last > shifted, np.arange(len(u_last)), -1))

    best_val = -math.inf
    best_rates: Dict[int, float] = {}
    capacities = [net.capacity(l) for l in net.links()]
    on_link = [set(net.group(l)) for l in net.links()]

    def close_last_two(depth_user_idx, acc_val, fixed, remaining):
        nonlocal best_val, best_rates
        s = users[depth_user_idx]
        xs = axes[depth_user_idx]
        ok = np.ones(len(xs), dtype=bool)
        for l in net.route(s):
            ok &= xs <= remaining[l] + 1e-9
        cap_last = np.full(len(xs), math.inf)
        for l in net.route(last):
            room = remaining[l] - (xs if s in on_link[l] else 0.0)
            cap_last = np.minimum(cap_last, room)
        idx = np.floor((cap_last + 1e-9) / h).astype(int)
        ok &= idx >= 0
        if not ok.any():
            return
        idx = np.clip(idx, 0, len(u_last) - 1)
        totals = np.where(
            ok,
            acc_val + np.asarray(value(utilities[s], xs), dtype=float) + prefix_best[idx],
            -math.inf,
        )
        j = int(np.argmax(totals))
        if totals[j] > best_val:
            best_val = float(totals[j])
            rates = dict(fixed)
            rates[s] = float(xs[j])
            rates[last] = float(axes[-1][prefix_arg[idx[j]]])
            best_rates = rates

    def recurse(depth, acc_val, fixed, remaining):
        if depth == len(users) - 2:
            close_last_two(depth, acc_val, fixed, remaining)
            return
        i = users[depth]
        for x in axes[depth]:
            if any(x > remaining[l] + 1e-9 for l in net.route(i)):
                break  # axes ascend, nothing larger fits either
            nxt = list(remaining)
            for l in net.route(i):
                nxt[l] -= x
            fixed[i] = float(x)
            recurse(depth + 1, acc_val + float(value(utilities[i], x)), fixed, nxt)
        fixed.pop(users[depth], None)

    if len(users) == 1:
        j = int(np.argmax(u_last))
        return {last: float(axes[-1][j])}
    recurse(0, 0.0, {}, capacities)
    return best_rates
