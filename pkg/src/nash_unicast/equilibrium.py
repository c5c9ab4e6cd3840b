"""Equilibrium construction and auditing.

``construct_ne`` turns the centralized solution into a message profile: each
user requests its optimal rate and posts the link multipliers as prices.
``audit`` measures every equilibrium property of a candidate profile without
judging it: price uniformity, complementary slackness, left-sided tax
derivatives against the link price, an exhaustive grid best-response gap,
individual rationality, budget balance, and agreement of the taxes with their
equilibrium closed forms. ``check_walrasian`` grid-checks that every user's
rate maximizes its payoff at the posted prices over the rates the others
leave available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple

import numpy as np

from .mechanism import (
    MechanismError,
    MechanismParams,
    Message,
    MessageProfile,
    SubsidyAssignment,
    WrongGroupSize,
    balance_term_large_group,
    balance_term_three_user,
    _cyclic_peers,
    eval_own_tax,
    outcome,
    own_tax_terms,
    validate_profile,
)
from .network import Network, is_feasible, link_load, min_route_capacity
from .solver import SolveResult, SolverConfig, solve_centralized, welfare
from .utilities import UtilitySpec, demand, payoff, value


class PriceBoundExceeded(MechanismError):
    pass


class NonUniformPrices(MechanismError):
    pass


@dataclass(frozen=True)
class NeAuditReport:
    """Measured equilibrium diagnostics; every field is a pure function of the
    inputs and finite. Small is good everywhere except ``ir_min_payoff``."""

    feasibility: bool
    price_uniformity: float
    complementary_slackness: float
    tax_derivative_gap: float
    best_response_gap: float
    ir_min_payoff: float
    budget_gap: float
    corollary_tax_gap: float


@dataclass(frozen=True)
class WalrasianCheck:
    ok: bool
    argmax_distance: float
    payoff_gap: float


def construct_ne(
    net: Network,
    utilities: Mapping[int, UtilitySpec],
    params: MechanismParams,
    solver_config: SolverConfig | None = None,
    solve_result: SolveResult | None = None,
) -> MessageProfile:
    """Equilibrium profile from the centralized solution: optimal rates, link
    multipliers as uniform prices. Fails loudly if a multiplier does not fit
    under the price bound (enlarge it) rather than clamping silently."""
    res = solve_result if solve_result is not None else solve_centralized(net, utilities, solver_config)
    for l, lam in res.lambdas.items():
        if lam > params.price_bound + 1e-12:
            raise PriceBoundExceeded(
                f"multiplier {lam} on link {l} exceeds the price bound {params.price_bound}"
            )
    profile = {
        i: Message(rate=res.rates[i], prices={l: res.lambdas[l] for l in net.route(i)})
        for i in net.users()
    }
    validate_profile(net, profile, params)
    return profile


def posted_link_price(net: Network, profile: MessageProfile, link: int) -> float:
    """Mean posted price on a link; equals the common price when uniform."""
    group = net.group(link)
    if not group:
        return 0.0
    return sum(profile[u].prices[link] for u in group) / len(group)


def ne_tax_closed_form(
    net: Network, profile: MessageProfile, link: int, user: int, params: MechanismParams
) -> float:
    """The link tax a uniform-price profile implies in closed form.

    Two users: price times own rate. More than three: price times the gap
    between the own rate and the peers' mean rate. Exactly three: the same
    plus an order-1/gamma skew between the two peers, the exact residue of
    the three-user balance term.
    """
    group = net.group(link)
    n = len(group)
    if n == 1:
        return 0.0
    p = posted_link_price(net, profile, link)
    x = profile[user].rate
    if n == 2:
        return p * x
    others = [u for u in group if u != user]
    mean_others = sum(profile[u].rate for u in others) / (n - 1)
    if n > 3:
        return p * (x - mean_others)
    j, k = _cyclic_peers(group, user)
    xj, xk = profile[j].rate, profile[k].rate
    return p * (x - 0.5 * (xj + xk)) + p * p * (xk - xj) / (2.0 * params.gamma)


@dataclass(frozen=True)
class _Candidate:
    pay: float
    rate: float
    prices: Tuple[float, ...]
    message: Message


def best_deviation(
    net: Network,
    utilities: Mapping[int, UtilitySpec],
    profile: MessageProfile,
    user: int,
    params: MechanismParams,
    br_grid: int,
) -> Tuple[Message, float, float]:
    """Grid-argmax of one user's payoff over its own message box.

    Candidates: a rate-by-uniform-price lattice spanning the whole box, a
    rate sweep holding the current prices (the price box is huge, so the
    uniform-price axis alone is too coarse to represent "ask for more at the
    going rate"), the analytic rate response at the current prices (the tax
    is linear in the own rate up to the overload wall, so the exact
    maximizer is a demand evaluation; a uniform grid cannot be trusted to
    straddle it), one single-link price sweep per route link off the current
    message, and the current message itself (so the reported best never
    loses to staying put). Subsidies received are omitted throughout; they
    do not depend on the user's own message. Ties break toward the smallest
    rate, then the lexicographically smallest price vector.

    Returns (best message, best payoff, current payoff).
    """
    route = net.route(user)
    tables = [(l, own_tax_terms(net, profile, l, user, params)) for l in route]
    u = utilities[user]
    cur = profile[user]
    cur_tax = {l: float(eval_own_tax(t, cur.rate, cur.prices[l])) for l, t in tables}
    cur_pay = float(value(u, cur.rate)) - sum(cur_tax.values())

    cap = min_route_capacity(net, user)
    xs = np.linspace(0.0, cap, br_grid)
    ps = np.linspace(0.0, params.price_bound, br_grid)

    total_tax = np.zeros((br_grid, br_grid))
    for _, t in tables:
        total_tax = total_tax + eval_own_tax(t, xs[:, None], ps[None, :])
    lattice = np.asarray(value(u, xs), dtype=float)[:, None] - total_tax
    flat = int(np.argmax(lattice))  # first max in row-major order: smallest rate, then price
    i0, j0 = divmod(flat, br_grid)
    cands: List[_Candidate] = [
        _Candidate(
            float(lattice[i0, j0]),
            float(xs[i0]),
            tuple(float(ps[j0]) for _ in route),
            Message(rate=float(xs[i0]), prices={l: float(ps[j0]) for l in route}),
        )
    ]

    rate_sweep_tax = np.zeros(br_grid)
    for l, t in tables:
        rate_sweep_tax = rate_sweep_tax + eval_own_tax(
            t, xs, np.full_like(xs, cur.prices[l])
        )
    rate_pays = np.asarray(value(u, xs), dtype=float) - rate_sweep_tax
    i1 = int(np.argmax(rate_pays))
    cands.append(
        _Candidate(
            float(rate_pays[i1]),
            float(xs[i1]),
            tuple(cur.prices[m] for m in route),
            cur.with_rate(float(xs[i1])),
        )
    )

    # Analytic rate response at current prices: marginal own cost per unit of
    # rate, and the rate beyond which some link's overload penalty fires.
    slope = 0.0
    room = cap
    for l, t in tables:
        if t.group_size == 1:
            continue
        slope += (t.peer_price_mean + t.price_adjust) - (
            2.0 / t.gamma
        ) * t.peer_price_mean * (cur.prices[l] - t.peer_price_mean)
        room = min(room, max(-t.peer_excess, 0.0))
    x_best = demand(u, max(slope, 0.0), room)
    best_tax = sum(float(eval_own_tax(t, x_best, cur.prices[l])) for l, t in tables)
    cands.append(
        _Candidate(
            float(value(u, x_best)) - best_tax,
            x_best,
            tuple(cur.prices[m] for m in route),
            cur.with_rate(x_best),
        )
    )

    for l, t in tables:
        sweep = np.asarray(
            eval_own_tax(t, np.full_like(ps, cur.rate), ps), dtype=float
        )
        other = sum(v for m, v in cur_tax.items() if m != l)
        pays = float(value(u, cur.rate)) - other - sweep
        j = int(np.argmax(pays))
        msg = cur.with_price(l, float(ps[j]))
        cands.append(
            _Candidate(
                float(pays[j]),
                cur.rate,
                tuple(msg.prices[m] for m in route),
                msg,
            )
        )

    cands.append(_Candidate(cur_pay, cur.rate, tuple(cur.prices[m] for m in route), cur))

    best = cands[0]
    for c in cands[1:]:
        if c.pay > best.pay or (c.pay == best.pay and (c.rate, c.prices) < (best.rate, best.prices)):
            best = c
    return best.message, best.pay, cur_pay


def audit(
    net: Network,
    utilities: Mapping[int, UtilitySpec],
    profile: MessageProfile,
    params: MechanismParams,
    subsidies: SubsidyAssignment,
    br_grid: int = 200,
) -> NeAuditReport:
    """Measure every equilibrium diagnostic of a valid profile. Reports only;
    callers decide what counts as passing."""
    validate_profile(net, profile, params)
    alloc = outcome(net, profile, params, subsidies)
    rates = alloc.rates

    uniformity = 0.0
    comp_slack = 0.0
    for l in net.links():
        group = net.group(l)
        if not group:
            continue
        prices = [profile[u].prices[l] for u in group]
        if len(group) >= 2:
            uniformity = max(uniformity, max(prices) - min(prices))
        excess = link_load(net, rates, l) - net.capacity(l)
        comp_slack = max(comp_slack, posted_link_price(net, profile, l) * abs(excess) / params.gamma)

    deriv_gap = 0.0
    for l in net.links():
        group = net.group(l)
        if len(group) < 2:
            continue
        p_link = posted_link_price(net, profile, l)
        for user in group:
            x = profile[user].rate
            if x <= 1e-12:
                continue  # no room for a left-sided step
            h = min(1e-6 * (1.0 + x), x)
            terms = own_tax_terms(net, profile, l, user, params)
            p_own = profile[user].prices[l]
            fd = (
                float(eval_own_tax(terms, x, p_own)) - float(eval_own_tax(terms, x - h, p_own))
            ) / h
            deriv_gap = max(deriv_gap, abs(fd - p_link))

    br_gap = 0.0
    for user in net.users():
        _, best_pay, cur_pay = best_deviation(net, utilities, profile, user, params, br_grid)
        br_gap = max(br_gap, best_pay - cur_pay)

    ir_min = min(payoff(utilities[i], rates[i], alloc.taxes[i]) for i in net.users())
    budget_gap = abs(sum(alloc.taxes.values()))

    corr_gap = 0.0
    for (user, l), lt in alloc.breakdown.link_taxes.items():
        expected = ne_tax_closed_form(net, profile, l, user, params)
        corr_gap = max(corr_gap, abs(lt.total - expected))

    return NeAuditReport(
        feasibility=is_feasible(net, rates),
        price_uniformity=uniformity,
        complementary_slackness=comp_slack,
        tax_derivative_gap=deriv_gap,
        best_response_gap=br_gap,
        ir_min_payoff=ir_min,
        budget_gap=budget_gap,
        corollary_tax_gap=corr_gap,
    )


def check_optimality(
    net: Network,
    utilities: Mapping[int, UtilitySpec],
    profile: MessageProfile,
    solve_result: SolveResult,
    params: MechanismParams,
    subsidies: SubsidyAssignment,
    tol: float = 1e-6,
) -> Tuple[bool, float]:
    """Does the profile's allocation attain the centralized optimum?

    True iff the welfare gap against the certified solver objective is within
    ``tol`` (relative) and the taxes net out to zero within ``tol``.
    """
    w = welfare(utilities, {i: profile[i].rate for i in net.users()})
    gap = abs(w - solve_result.objective) / max(1.0, abs(solve_result.objective))
    alloc = outcome(net, profile, params, subsidies)
    balanced = abs(sum(alloc.taxes.values())) <= tol
    return (gap <= tol and balanced), gap


def zero_tax_deviation_price(
    net: Network, profile: MessageProfile, link: int, user: int, params: MechanismParams
) -> float:
    """The own link price at which requesting a zero rate costs exactly nothing,
    with everyone else fixed at a uniform-price profile.

    For a two-user link that price is simply the peer's price. For larger
    groups the zero-rate tax is a quadratic in the own price whose larger
    root is returned; it is always non-negative.
    """
    group = net.group(link)
    n = len(group)
    if n == 1:
        raise WrongGroupSize(f"link {link} has a single user; no deviation price is defined")
    if user not in group:
        raise MechanismError(f"user {user} is not on link {link}")
    others = [u for u in group if u != user]
    pstar = sum(profile[u].prices[link] for u in others) / len(others)
    if n == 2:
        return pstar
    if n == 3:
        d3 = balance_term_three_user(net, profile, link, user, params)
    else:
        d3 = balance_term_large_group(net, profile, link, user, params)
    excess = sum(profile[u].rate for u in others) - net.capacity(link)
    g = params.gamma
    half_b = -pstar * (1.0 + excess / g)
    c0 = pstar * pstar * (1.0 + 2.0 * excess / g) + d3
    disc = half_b * half_b - c0
    if disc < 0.0:
        raise MechanismError(
            f"zero-rate tax never crosses zero on link {link} for user {user}"
        )
    return max(-half_b + math.sqrt(disc), 0.0)


def check_walrasian(
    net: Network,
    utilities: Mapping[int, UtilitySpec],
    profile: MessageProfile,
    grid_step: float,
) -> Dict[int, WalrasianCheck]:
    """Grid-check the competitive property of a uniform-price profile.

    For each user, scan rates over what the others leave available on its
    route and compare payoffs at the posted prices. Passes when the user's
    rate sits within one grid step of the scanned argmax and its payoff is
    within 1e-6 of the scanned maximum.
    """
    link_price = {}
    for l in net.links():
        group = net.group(l)
        if not group:
            link_price[l] = 0.0
            continue
        prices = [profile[u].prices[l] for u in group]
        if max(prices) - min(prices) > 1e-9:
            raise NonUniformPrices(f"link {l} prices spread {max(prices) - min(prices)}")
        link_price[l] = prices[0]

    out: Dict[int, WalrasianCheck] = {}
    for i in net.users():
        room = min(
            net.capacity(l) - sum(profile[j].rate for j in net.group(l) if j != i)
            for l in net.route(i)
        )
        room = max(room, 0.0)
        total_price = sum(link_price[l] for l in net.route(i))
        grid = np.arange(0, int(math.floor(room / grid_step + 1e-9)) + 1) * grid_step
        if room - grid[-1] > 1e-12:
            grid = np.append(grid, room)
        vals = np.asarray(value(utilities[i], grid), dtype=float) - total_price * grid
        best = float(np.max(vals))
        argmaxes = grid[vals >= best - 1e-12]
        x = profile[i].rate
        dist = float(np.min(np.abs(argmaxes - x)))
        pay_gap = best - (float(value(utilities[i], x)) - total_price * x)
        out[i] = WalrasianCheck(
            ok=(dist <= grid_step + 1e-12 and pay_gap <= 1e-6),
            argmax_distance=dist,
            payoff_gap=pay_gap,
        )
    return out
