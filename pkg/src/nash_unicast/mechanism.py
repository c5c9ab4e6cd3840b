"""The rate-allocation game form: messages, per-link taxes, subsidies, outcome.

Every user posts one message: a rate request (common to every link on its
route) and a price per unit for each route link. The outcome grants each
request verbatim and charges per-link taxes built from four ingredients:

* a price part: the rate times the mean of the *peers'* posted prices, so no
  user controls the price it pays;
* an incentive part: a quadratic charge for disagreeing with the peers' mean
  price, a capacity-coupling term, and a very large penalty that fires only
  when the user requests a positive rate on an overloaded link;
* a balance part, independent of the user's own message, that makes each
  link's taxes sum to zero when three or more users share the link;
* for two-user links, where no such balance part exists, a subsidy equal to
  the negated link taxes is paid to a randomly chosen outside user, which
  restores the overall budget without distorting anyone's incentives.

Taxes sum to zero across all users at every feasible rate profile, on or off
equilibrium. All functions are pure; the only randomness is the seeded
subsidy-recipient draw.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Dict, Mapping

import numpy as np

from .network import BOUNDARY_TOL, Network, min_route_capacity
from .utilities import UtilitySpec, initial_slope


class MechanismError(ValueError):
    pass


class UserNotOnLink(MechanismError):
    pass


class WrongGroupSize(MechanismError):
    pass


class NoEligibleRecipient(MechanismError):
    pass


class RateOutOfBounds(MechanismError):
    pass


class PriceOutOfBounds(MechanismError):
    pass


class RouteMismatch(MechanismError):
    pass


@dataclass(frozen=True)
class MechanismParams:
    """Tax-shape constants.

    ``alpha`` and ``gamma`` damp the quadratic and coupling terms and must be
    large relative to the scenario's capacities and prices; ``epsilon``
    controls how hard the overload penalty bites (about ``1/(2*epsilon)``);
    ``price_bound`` closes the price box; ``rng_seed`` fixes the subsidy
    recipient draw.
    """

    alpha: float
    gamma: float
    epsilon: float = 1e-6
    price_bound: float = 1e3
    rng_seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise MechanismError(f"alpha must be positive, got {self.alpha}")
        if not self.gamma > 0.0:
            raise MechanismError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 < self.epsilon < 0.5:
            raise MechanismError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")
        if not self.price_bound > 0.0:
            raise MechanismError(f"price_bound must be positive, got {self.price_bound}")

    @staticmethod
    def defaults(
        net: Network,
        utilities: Mapping[int, UtilitySpec] | None = None,
        price_bound: float | None = None,
        epsilon: float = 1e-6,
        rng_seed: int = 0,
    ) -> "MechanismParams":
        """Scenario-scaled defaults: alpha = gamma = 1e4 * (max capacity)^2 and a
        price bound of 1e3 times the steepest initial marginal utility."""
        scale = 1e4 * max(net.capacities) ** 2
        if price_bound is None:
            if utilities is None:
                raise MechanismError("price_bound is required when utilities are unknown")
            price_bound = 1e3 * max(initial_slope(u) for u in utilities.values())
        return MechanismParams(
            alpha=scale, gamma=scale, epsilon=epsilon, price_bound=price_bound, rng_seed=rng_seed
        )


@dataclass(frozen=True)
class Message:
    """One user's strategy: a rate request plus a price per route link."""

    rate: float
    prices: Dict[int, float]

    def with_rate(self, rate: float) -> "Message":
        return replace(self, rate=rate)

    def with_price(self, link: int, price: float) -> "Message":
        prices = dict(self.prices)
        prices[link] = price
        return replace(self, prices=prices)


MessageProfile = Dict[int, Message]
SubsidyAssignment = Dict[int, int]


@dataclass(frozen=True)
class LinkTerms:
    """Per (user, link) externality statistics driving the tax."""

    peer_price_mean: float
    peer_excess: float
    own_excess: float
    group_size: int


@dataclass(frozen=True)
class LinkTax:
    """One user's tax on one link, split into its components.

    ``penalty`` repeats the overload penalty contained in ``incentive_part``
    so reports can single it out.
    """

    price_part: float
    incentive_part: float
    balance_part: float
    penalty: float

    @property
    def total(self) -> float:
        return (self.price_part + self.incentive_part) + self.balance_part


@dataclass
class TaxBreakdown:
    link_taxes: Dict[tuple, LinkTax]  # (user, link) -> components
    subsidies: Dict[int, float]  # user -> money received through subsidy transfers
    totals: Dict[int, float]  # user -> overall tax t_i


@dataclass
class Allocation:
    rates: Dict[int, float]
    taxes: Dict[int, float]
    breakdown: TaxBreakdown


def indicator(holds: bool, eps: float) -> float:
    """Soft truth value: 1 - eps when the condition holds, else 0."""
    return 1.0 - eps if holds else 0.0


def penalty(a: bool, b: bool, eps: float) -> float:
    """q/(1-q) with q the product of both soft indicators.

    Roughly 1/(2*eps) when both conditions hold, exactly 0 otherwise.
    """
    q = indicator(a, eps) * indicator(b, eps)
    return q / (1.0 - q)


def link_terms(net: Network, profile: MessageProfile, link: int, user: int) -> LinkTerms:
    """Externality statistics for one user on one link: the peers' mean price,
    the peers' total rate minus capacity, and the user's own scaled excess."""
    group = net.group(link)
    if user not in group:
        raise UserNotOnLink(f"user {user} is not on link {link}")
    n = len(group)
    c = net.capacity(link)
    others = [u for u in group if u != user]
    mean_p = sum(profile[u].prices[link] for u in others) / (n - 1) if others else 0.0
    peer_excess = sum(profile[u].rate for u in others) - c
    own_excess = (n - 1) * profile[user].rate - c
    return LinkTerms(mean_p, peer_excess, own_excess, n)


def _cyclic_peers(group, user):
    """The two other users of a three-user link, in ascending-id cyclic order."""
    order = list(group)
    pos = order.index(user)
    return order[(pos + 1) % 3], order[(pos + 2) % 3]


def balance_term_three_user(
    net: Network, profile: MessageProfile, link: int, user: int, params: MechanismParams
) -> float:
    """Message-independent balance term for a user on a three-user link.

    Built entirely from the two peers' messages, so the user cannot influence
    it. Together with the matching per-unit price adjustment in the tax it
    makes the three link taxes sum to zero at every feasible profile.
    """
    group = net.group(link)
    if len(group) != 3:
        raise WrongGroupSize(f"link {link} has {len(group)} users, need 3")
    if user not in group:
        raise UserNotOnLink(f"user {user} is not on link {link}")
    j, k = _cyclic_peers(group, user)
    pj, xj = profile[j].prices[link], profile[j].rate
    pk, xk = profile[k].prices[link], profile[k].rate
    c = net.capacity(link)
    g = params.gamma
    mean_p = 0.5 * (pj + pk)
    peer_excess = xj + xk - c

    pairs = ((pj, xj, pk, xk), (pk, xk, pj, xj))
    quad_pairs = sum(2.0 * pr * ps * (1.0 + xr / g) - xr * ps for pr, xr, ps, _ in pairs) / 2.0
    coupling_pairs = sum(
        2.0 * ps * (pr * (2.0 * xs - c) - xr * ps) for pr, xr, ps, xs in pairs
    ) / (4.0 * g)
    # The -c*pj*pk/g piece is required for the link's three taxes to sum to
    # zero; without it the sum is c*(sum of pairwise price products)/gamma.
    lead = (pj * pj * xk - c * pj * pk) / g
    return (
        lead
        + quad_pairs
        + coupling_pairs
        - 0.5 * (pj * pj + pk * pk)
        - mean_p * mean_p
        - 2.0 * peer_excess * mean_p * mean_p / g
    )


def balance_term_large_group(
    net: Network, profile: MessageProfile, link: int, user: int, params: MechanismParams
) -> float:
    """Message-independent balance term for links shared by more than three
    users; zeroes the link's tax sum at every feasible profile."""
    group = net.group(link)
    n = len(group)
    if n <= 3:
        raise WrongGroupSize(f"link {link} has {n} users, need more than 3")
    if user not in group:
        raise UserNotOnLink(f"user {user} is not on link {link}")
    others = [u for u in group if u != user]
    c = net.capacity(link)
    g = params.gamma
    p = {u: profile[u].prices[link] for u in others}
    x = {u: profile[u].rate for u in others}
    exc = {u: (n - 1) * x[u] - c for u in others}

    mean_p = sum(p.values()) / (n - 1)
    peer_excess = sum(x.values()) - c

    quad = 0.0
    pair_coupling = 0.0
    triple_coupling = 0.0
    for j in others:
        for k in others:
            if k == j:
                continue
            quad += 2.0 * p[j] * p[k] * (1.0 + x[j] / g) - x[j] * p[k]
            pair_coupling += 2.0 * p[k] * (p[j] * exc[k] - x[j] * p[k])
            for r in others:
                if r == j or r == k:
                    continue
                triple_coupling += 2.0 * p[k] * (p[j] * exc[r] - x[j] * p[r])
    quad /= (n - 1) * (n - 2)
    pair_coupling /= g * (n - 1) ** 2 * (n - 2)
    triple_coupling /= g * (n - 1) ** 2 * (n - 3)

    return (
        quad
        + triple_coupling
        + pair_coupling
        - sum(v * v for v in p.values()) / (n - 1)
        - mean_p * mean_p
        - 2.0 * peer_excess * mean_p * mean_p / g
    )


@dataclass(frozen=True)
class OwnTaxTerms:
    """Coefficients fixing one user's link tax as a function of its own message.

    Everything here depends only on the peers' messages and the parameters,
    so a user's tax at any own (rate, price) evaluates in closed form. Used
    both by the outcome function and by deviation searches.
    """

    group_size: int
    capacity: float
    gamma: float
    peer_price_mean: float
    price_adjust: float  # per-unit surcharge from peers' prices (three-user links only)
    quad_weight: float  # 1/alpha on two-user links, 1 on larger ones
    peer_excess: float
    balance_const: float
    penalty_both: float  # overload penalty when requesting a positive rate
    penalty_single: float  # singleton-link overload penalty


def own_tax_terms(
    net: Network, profile: MessageProfile, link: int, user: int, params: MechanismParams
) -> OwnTaxTerms:
    group = net.group(link)
    if user not in group:
        raise UserNotOnLink(f"user {user} is not on link {link}")
    n = len(group)
    c = net.capacity(link)
    eps = params.epsilon
    pen_both = penalty(True, True, eps)
    pen_single = indicator(True, eps) / (1.0 - indicator(True, eps))
    if n == 1:
        return OwnTaxTerms(
            group_size=1,
            capacity=c,
            gamma=params.gamma,
            peer_price_mean=0.0,
            price_adjust=0.0,
            quad_weight=0.0,
            peer_excess=-c,
            balance_const=0.0,
            penalty_both=pen_both,
            penalty_single=pen_single,
        )
    if n == 2:
        (j,) = (u for u in group if u != user)
        return OwnTaxTerms(
            group_size=2,
            capacity=c,
            gamma=params.gamma,
            peer_price_mean=profile[j].prices[link],
            price_adjust=0.0,
            quad_weight=1.0 / params.alpha,
            peer_excess=profile[j].rate - c,
            balance_const=0.0,
            penalty_both=pen_both,
            penalty_single=pen_single,
        )
    terms = link_terms(net, profile, link, user)
    if n == 3:
        j, k = _cyclic_peers(group, user)
        pj, pk = profile[j].prices[link], profile[k].prices[link]
        adjust = pk * (pj - pk) / params.gamma
        balance = balance_term_three_user(net, profile, link, user, params)
    else:
        adjust = 0.0
        balance = balance_term_large_group(net, profile, link, user, params)
    return OwnTaxTerms(
        group_size=n,
        capacity=c,
        gamma=params.gamma,
        peer_price_mean=terms.peer_price_mean,
        price_adjust=adjust,
        quad_weight=1.0,
        peer_excess=terms.peer_excess,
        balance_const=balance,
        penalty_both=pen_both,
        penalty_single=pen_single,
    )


def eval_own_tax(terms: OwnTaxTerms, x, p):
    """The user's link tax at own rate ``x`` and own link price ``p``.

    Broadcasts over numpy arrays, which is what makes exhaustive deviation
    searches cheap.
    """
    xa = np.asarray(x, dtype=float)
    if terms.group_size == 1:
        return np.where(xa > terms.capacity + BOUNDARY_TOL, terms.penalty_single, 0.0)[()]
    dev = np.asarray(p, dtype=float) - terms.peer_price_mean
    tax = (
        (terms.peer_price_mean + terms.price_adjust) * xa
        + terms.quad_weight * dev * dev
        - (2.0 / terms.gamma) * terms.peer_price_mean * dev * (terms.peer_excess + xa)
        + terms.balance_const
    )
    firing = (xa > BOUNDARY_TOL) & (terms.peer_excess + xa > BOUNDARY_TOL)
    return (tax + np.where(firing, terms.penalty_both, 0.0))[()]


def _own_tax_parts(terms: OwnTaxTerms, x: float, p: float):
    """(price, quadratic, coupling, penalty) parts of one user's link tax."""
    if terms.group_size == 1:
        pen = terms.penalty_single if x > terms.capacity + BOUNDARY_TOL else 0.0
        return 0.0, 0.0, 0.0, pen
    dev = p - terms.peer_price_mean
    price_part = (terms.peer_price_mean + terms.price_adjust) * x
    quad = terms.quad_weight * dev * dev
    coupling = -(2.0 / terms.gamma) * terms.peer_price_mean * dev * (terms.peer_excess + x)
    pen = (
        terms.penalty_both
        if (x > BOUNDARY_TOL and terms.peer_excess + x > BOUNDARY_TOL)
        else 0.0
    )
    return price_part, quad, coupling, pen


def tax_link(
    net: Network, profile: MessageProfile, link: int, params: MechanismParams
) -> Dict[int, LinkTax]:
    """Per-user link taxes with their component breakdown."""
    out: Dict[int, LinkTax] = {}
    for user in net.group(link):
        terms = own_tax_terms(net, profile, link, user, params)
        m = profile[user]
        price_part, quad, coupling, pen = _own_tax_parts(terms, m.rate, m.prices[link])
        out[user] = LinkTax(
            price_part=price_part,
            incentive_part=quad + coupling + pen,
            balance_part=terms.balance_const,
            penalty=pen,
        )
    return out


def link_subsidy(
    net: Network, profile: MessageProfile, link: int, params: MechanismParams
) -> float:
    """The transfer that cancels a two-user link's non-penalty taxes.

    Negative whenever the pair pays net positive tax; added to the recipient's
    tax total. Penalties stay out: they are zero at every feasible profile,
    which is exactly where budget balance is claimed. Never depends on the
    recipient's message.
    """
    group = net.group(link)
    if len(group) != 2:
        raise WrongGroupSize(f"link {link} has {len(group)} users, need 2")
    total = 0.0
    for user in group:
        terms = own_tax_terms(net, profile, link, user, params)
        m = profile[user]
        price_part, quad, coupling, _ = _own_tax_parts(terms, m.rate, m.prices[link])
        total += price_part + (quad + coupling)
    return -total


def assign_subsidies(net: Network, rng_seed: int) -> SubsidyAssignment:
    """Pick, for every two-user link, a uniformly random recipient outside the
    link's group. Deterministic given the seed; recipients need not be
    distinct across links."""
    rng = random.Random(rng_seed)
    assignment: SubsidyAssignment = {}
    for link in net.links():
        group = net.group(link)
        if len(group) != 2:
            continue
        eligible = [u for u in net.users() if u not in group]
        if not eligible:
            raise NoEligibleRecipient(
                f"link {link} is shared by two users and nobody else exists to receive its subsidy"
            )
        assignment[link] = eligible[rng.randrange(len(eligible))]
    return assignment


def validate_profile(net: Network, profile: MessageProfile, params: MechanismParams) -> None:
    """Check every message against its box: price keys equal the route, the
    rate fits below the route's narrowest link, prices fit below the bound.
    Boundaries are closed (with BOUNDARY_TOL slack for arithmetic noise)."""
    missing = [u for u in net.users() if u not in profile]
    extra = [u for u in profile if not 0 <= u < net.num_users]
    if missing or extra:
        raise RouteMismatch(f"profile users mismatch: missing {missing}, unknown {extra}")
    for user in net.users():
        m = profile[user]
        route = set(net.route(user))
        keys = set(m.prices)
        if keys != route:
            raise RouteMismatch(
                f"user {user}: price links {sorted(keys)} do not match route {sorted(route)}"
            )
        cap = min_route_capacity(net, user)
        if not -BOUNDARY_TOL <= m.rate <= cap + BOUNDARY_TOL:
            raise RateOutOfBounds(f"user {user}: rate {m.rate} outside [0, {cap}]")
        for link, price in m.prices.items():
            if not -BOUNDARY_TOL <= price <= params.price_bound + BOUNDARY_TOL:
                raise PriceOutOfBounds(
                    f"user {user}: price {price} on link {link} outside [0, {params.price_bound}]"
                )


def outcome(
    net: Network,
    profile: MessageProfile,
    params: MechanismParams,
    subsidies: SubsidyAssignment,
) -> Allocation:
    """Rates as requested plus the full tax vector and its breakdown.

    ``subsidies`` must name a recipient outside the group for every two-user
    link (see ``assign_subsidies``).
    """
    validate_profile(net, profile, params)
    two_user_links = {l for l in net.links() if len(net.group(l)) == 2}
    if set(subsidies) != two_user_links:
        raise MechanismError(
            f"subsidy assignment covers links {sorted(subsidies)}, expected {sorted(two_user_links)}"
        )
    for link, recipient in subsidies.items():
        if recipient in net.group(link):
            raise MechanismError(f"subsidy recipient {recipient} sits on its own link {link}")

    link_taxes: Dict[tuple, LinkTax] = {}
    totals: Dict[int, float] = {u: 0.0 for u in net.users()}
    received: Dict[int, float] = {u: 0.0 for u in net.users()}
    for link in net.links():
        for user, lt in tax_link(net, profile, link, params).items():
            link_taxes[(user, link)] = lt
            totals[user] += lt.total
    for link in sorted(subsidies):
        q = link_subsidy(net, profile, link, params)
        recipient = subsidies[link]
        totals[recipient] += q
        received[recipient] -= q

    rates = {u: profile[u].rate for u in net.users()}
    breakdown = TaxBreakdown(link_taxes=link_taxes, subsidies=received, totals=dict(totals))
    return Allocation(rates=rates, taxes=dict(totals), breakdown=breakdown)
