"""Exact solvers on finite-state instances.

Everything here is computed from transition matrices and payoff tables,
no sampling: backward recursion for value tables, forward alive-mass
propagation for the exact value of any product region, brute-force search
over all product regions, the exact identity linking the value gap of a
region to margin-weighted disagreement mass, and the two corollary bounds
(payoff distance vs region distance, regret vs region distance under a
margin condition).

``exact_region_value`` is the single summation routine behind every value
reported by this module, so values of the same region agree bit for bit
across entry points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConstructionError,
    DegenerateFitError,
    EnumerationSizeError,
    ParameterError,
)
from .process import DiscreteChainSpec
from .stopping import TablePayoff, TableRegion, membership_table

ENUMERATION_GUARD_BITS = 24


@dataclass(frozen=True)
class DiscreteInstance:
    """A chain spec plus a payoff table on the same (dates, states) grid."""

    chain: DiscreteChainSpec
    payoff: TablePayoff

    def __post_init__(self):
        if (self.payoff.dates, self.payoff.states) != (self.chain.dates, self.chain.states):
            raise ConstructionError("payoff table shape does not match the chain")

    @property
    def dates(self) -> int:
        return self.chain.dates

    @property
    def states(self) -> int:
        return self.chain.states


@dataclass(frozen=True)
class ValueTables:
    """Backward-recursion output.

    value[k-1, s] is the optimal value from date k in state s;
    continuation[k-1, s] the conditional expectation of the next date's
    value (dates 1..K-1); region_star the optimal region with ties
    stopping; root_value the optimal value seen from the initial state,
    computed by the same forward summation used for any region's value.
    """

    value: np.ndarray
    continuation: np.ndarray
    region_star: TableRegion
    root_value: float


def _as_member(region) -> np.ndarray:
    if isinstance(region, TableRegion):
        return region.member
    member = np.asarray(region, dtype=bool)
    if member.ndim != 2 or not member[-1].all():
        raise ParameterError("region must be a (dates, states) table, full at the last date")
    return member


def exact_region_value(instance: DiscreteInstance, region) -> float:
    """Expected stopped payoff of a product region, by alive-mass propagation.

    Mass starts at the law of X_1, pays the date's payoff on the stop set,
    and pushes the rest through the next transition.  The accumulation
    order (date-major, states reduced by one dot product per date) is the
    canonical one for the whole module.
    """
    member = _as_member(region)
    chain, pay = instance.chain, instance.payoff.table
    if member.shape != pay.shape:
        raise ParameterError("region table shape does not match the instance")
    alive = chain.transitions[0][chain.initial].copy()
    total = 0.0
    for k in range(chain.dates):
        stop = member[k]
        total += float(alive[stop] @ pay[k, stop])
        if k < chain.dates - 1:
            alive = (alive * ~stop) @ chain.transitions[k + 1]
    return total


def backward_induction(instance: DiscreteInstance) -> ValueTables:
    """Dynamic-programming value tables; ties (continuation == payoff) stop."""
    chain, pay = instance.chain, instance.payoff.table
    K, S = chain.dates, chain.states
    value = np.empty((K, S))
    continuation = np.empty((max(K - 1, 0), S))
    value[K - 1] = pay[K - 1]
    for k in range(K - 2, -1, -1):
        continuation[k] = chain.transitions[k + 1] @ value[k + 1]
        value[k] = np.maximum(pay[k], continuation[k])
    member = np.ones((K, S), dtype=bool)
    if K > 1:
        member[: K - 1] = continuation <= pay[: K - 1]
    region_star = TableRegion(member)
    return ValueTables(
        value=value,
        continuation=continuation,
        region_star=region_star,
        root_value=exact_region_value(instance, region_star),
    )


def region_from_index(index: int, dates: int, states: int) -> np.ndarray:
    """Decode a region index: bit (k*states + s) is membership of state s
    at date k+1, for the first dates-1 dates; the last date is always full."""
    member = np.ones((dates, states), dtype=bool)
    for k in range(dates - 1):
        for s in range(states):
            member[k, s] = bool((index >> (k * states + s)) & 1)
    return member


def exhaustive_region_search(instance: DiscreteInstance) -> tuple:
    """Best product region by complete enumeration.

    Returns (value, member).  Ties pick the smallest region index, which
    is the lexicographically smallest membership tuple under the module's
    bit order.  Guarded: states * (dates - 1) bits at most 24.
    """
    K, S = instance.dates, instance.states
    bits = S * (K - 1)
    if bits > ENUMERATION_GUARD_BITS:
        raise EnumerationSizeError(
            f"{bits} region bits exceed the enumeration guard ({ENUMERATION_GUARD_BITS})"
        )
    best_value = -np.inf
    best_member = None
    for index in range(1 << bits):
        member = region_from_index(index, K, S)
        value = exact_region_value(instance, member)
        if value > best_value:
            best_value = value
            best_member = member
    return best_value, best_member


def _disagreement_masses(instance: DiscreteInstance, member_a, member_b) -> np.ndarray:
    """P(X_l in symdiff at l, second rule not stopped before l) for l = 1..K.

    Paths leave the count once the second region stops them: disagreement
    behind an earlier stop of that rule can no longer change where it
    stops.  This is the masking under which the value-gap identity below
    is exact, and it makes the distance asymmetric in its arguments.
    """
    chain = instance.chain
    alive = chain.transitions[0][chain.initial].copy()
    out = np.empty(chain.dates)
    for k in range(chain.dates):
        disagree = member_a[k] ^ member_b[k]
        out[k] = float(alive @ disagree.astype(np.float64))
        if k < chain.dates - 1:
            alive = (alive * ~member_b[k]) @ chain.transitions[k + 1]
    return out


def masked_region_distance(instance: DiscreteInstance, region_a, region_b) -> float:
    """Sum over dates of the joint-history disagreement masses.

    Never exceeds the marginal symmetric-difference distance; the date-K
    term is identically zero because both regions are full there.
    """
    member_a = _as_member(region_a)
    member_b = _as_member(region_b)
    return float(_disagreement_masses(instance, member_a, member_b).sum())


def value_gap_identity(instance: DiscreteInstance, region, tables: ValueTables = None) -> tuple:
    """Both sides of the exact gap identity, from the initial state.

    Left: optimal root value minus the region's value.  Right: sum over
    dates l <= K-1 of |G_l - C_l| weighted by the mass of paths that reach
    l not yet stopped by the candidate rule and whose date-l state is in
    the membership symmetric difference.  Equal up to summation rounding:
    stopping where the optimal rule continues, or continuing where it
    stops, each cost exactly the local margin, collected while the
    candidate is still running.
    """
    if tables is None:
        tables = backward_induction(instance)
    member = _as_member(region)
    member_star = tables.region_star.member
    chain, pay = instance.chain, instance.payoff.table
    lhs = tables.root_value - exact_region_value(instance, member)
    rhs = 0.0
    alive = chain.transitions[0][chain.initial].copy()
    for k in range(chain.dates - 1):
        weight = np.abs(pay[k] - tables.continuation[k])
        disagree = member_star[k] ^ member[k]
        rhs += float(alive @ (weight * disagree))
        alive = (alive * ~member[k]) @ chain.transitions[k + 1]
    return lhs, rhs


def payoff_l2_distance(instance: DiscreteInstance, region_a, region_b) -> float:
    """Exact L2 distance between the stopped payoffs of two regions.

    Full path enumeration (guarded), so it is usable as an independent
    check against anything built from per-date propagation.
    """
    member_a = _as_member(region_a)
    member_b = _as_member(region_b)
    chain, pay = instance.chain, instance.payoff.table
    K, S = chain.dates, chain.states
    if S**K > (1 << 20):
        raise EnumerationSizeError(f"{S}^{K} paths exceed the enumeration guard")
    seqs = np.stack(np.meshgrid(*([np.arange(S)] * K), indexing="ij"), axis=-1).reshape(-1, K)
    prob = chain.transitions[0][chain.initial][seqs[:, 0]].copy()
    for k in range(1, K):
        prob *= chain.transitions[k][seqs[:, k - 1], seqs[:, k]]
    dates = np.arange(K)[None, :]
    pays = pay[dates, seqs]
    tau_a = np.argmax(member_a[dates, seqs], axis=1)
    tau_b = np.argmax(member_b[dates, seqs], axis=1)
    rows = np.arange(seqs.shape[0])
    diff = pays[rows, tau_a] - pays[rows, tau_b]
    return float(np.sqrt(prob @ (diff * diff)))


def payoff_distance_bound_check(instance: DiscreteInstance, region_a, region_b) -> dict:
    """Payoff L2 distance against 2 * sup|G| * sqrt(2 * masked distance)."""
    lhs = payoff_l2_distance(instance, region_a, region_b)
    dist = masked_region_distance(instance, region_a, region_b)
    rhs = 2.0 * instance.payoff.sup_norm() * np.sqrt(2.0 * dist)
    return {"lhs": lhs, "rhs": rhs, "masked_distance": dist, "ok": bool(lhs <= rhs + 1e-12)}


@dataclass(frozen=True)
class MarginFit:
    """Margin law summary: P(|G - C| <= delta) <= a0 * delta^alpha on (0, delta0]."""

    alpha: float
    a0: float
    delta0: float
    deltas: np.ndarray
    probs: np.ndarray


def margin_weights(instance: DiscreteInstance, tables: ValueTables = None) -> tuple:
    """(weights, masses): |G_l - C_l| per (date l <= K-1, state) with the
    marginal mass of that state at that date."""
    if tables is None:
        tables = backward_induction(instance)
    K = instance.dates
    if K < 2:
        raise DegenerateFitError("margin needs at least two dates")
    weights = np.abs(instance.payoff.table[: K - 1] - tables.continuation)
    masses = instance.chain.marginals()[: K - 1]
    return weights.ravel(), masses.ravel()


def margin_probability(instance: DiscreteInstance, deltas, tables: ValueTables = None) -> np.ndarray:
    """P(|G_l - C_l| <= delta) summed over dates 1..K-1, exactly."""
    weights, masses = margin_weights(instance, tables)
    deltas = np.atleast_1d(np.asarray(deltas, dtype=np.float64))
    return (masses[None, :] * (weights[None, :] <= deltas[:, None])).sum(axis=1)


def margin_probe(instance: DiscreteInstance, delta_grid, delta0: float = 0.49) -> MarginFit:
    """Fit the margin exponent on a delta grid by log-log least squares.

    Only grid points with positive probability enter the fit (a gap law
    reports zeros below its first atom and fits nothing there).  At least
    two informative points are required.  The returned scale constant is
    the smallest one making the bound hold exactly at the fitted exponent
    over (0, delta0], so the fitted triple always satisfies its own
    hypothesis.
    """
    deltas = np.atleast_1d(np.asarray(delta_grid, dtype=np.float64))
    if np.any(deltas <= 0):
        raise ParameterError("delta grid must be positive")
    probs = margin_probability(instance, deltas)
    keep = probs > 0
    if keep.sum() < 2:
        raise DegenerateFitError("fewer than two grid points with positive margin probability")
    x = np.log(deltas[keep])
    y = np.log(probs[keep])
    if np.ptp(x) == 0.0:
        raise DegenerateFitError("margin fit needs at least two distinct deltas")
    slope = float(((x - x.mean()) @ (y - y.mean())) / ((x - x.mean()) @ (x - x.mean())))
    # a flat or decreasing profile is reported, not raised; it just cannot
    # back a finite scale constant
    a0 = _margin_scale(instance, slope, delta0) if slope > 0 else float("inf")
    return MarginFit(alpha=slope, a0=a0, delta0=delta0, deltas=deltas, probs=probs)


def _margin_scale(instance: DiscreteInstance, alpha: float, delta0: float) -> float:
    """Exact sup of P(|G - C| <= delta) / delta^alpha over delta in (0, delta0].

    The ratio is piecewise decreasing between atoms, so the supremum sits
    at the atoms; mass exactly at zero makes it infinite.
    """
    if alpha <= 0:
        raise DegenerateFitError("margin exponent must be positive")
    weights, masses = margin_weights(instance)
    if float(masses[weights == 0.0].sum()) > 0.0:
        raise DegenerateFitError("margin has mass at zero; no finite scale constant")
    order = np.argsort(weights)
    w = weights[order]
    cum = np.cumsum(masses[order])
    keep = (w > 0) & (w <= delta0)
    if not keep.any():
        return 0.0
    return float(np.max(cum[keep] / w[keep] ** alpha))


def fit_margin(instance: DiscreteInstance, delta0: float = 0.49) -> MarginFit:
    """Margin fit over the instance's own atoms below delta0."""
    weights, masses = margin_weights(instance)
    atoms = np.unique(weights[(weights > 0) & (weights <= delta0)])
    if atoms.size < 2:
        raise DegenerateFitError("fewer than two margin atoms below delta0")
    return margin_probe(instance, atoms, delta0=delta0)


def margin_regret_bounds(instance: DiscreteInstance, region, fit: MarginFit,
                         tables: ValueTables = None) -> dict:
    """Check the two margin-condition consequences on one region.

    Lower bound: regret >= coeff * masked_distance^((1+alpha)/alpha),
    applicable when the masked distance is at most the margin radius.
    Upper bound: masked_distance <= (2^(1/alpha)/delta0) * regret +
    radius / (2 (1 + alpha)), always.
    """
    if tables is None:
        tables = backward_induction(instance)
    member = _as_member(region)
    alpha, a0, delta0 = fit.alpha, fit.a0, fit.delta0
    if alpha <= 0 or not np.isfinite(a0):
        raise DegenerateFitError("margin fit is not applicable (nonpositive exponent)")
    regret = tables.root_value - exact_region_value(instance, member)
    dist = masked_region_distance(instance, tables.region_star.member, member)
    coeff = a0 ** (-1.0 / alpha) * alpha * (1.0 + alpha) ** (-1.0 - 1.0 / alpha)
    radius = a0 * (alpha + 1.0) * delta0**alpha
    applicable = dist <= radius
    ok_lower = (not applicable) or (regret >= coeff * dist ** ((1.0 + alpha) / alpha) - 1e-12)
    upper = (2.0 ** (1.0 / alpha) / delta0) * regret + radius / (2.0 * (1.0 + alpha))
    ok_upper = dist <= upper + 1e-12
    return {
        "regret": regret,
        "masked_distance": dist,
        "coeff": coeff,
        "radius": radius,
        "applicable": bool(applicable),
        "ok_lower": bool(ok_lower),
        "ok_upper": bool(ok_upper),
        "upper": upper,
    }


def random_instance(rng: np.random.Generator, max_states: int = 4, max_dates: int = 4,
                    min_states: int = 2, min_dates: int = 2) -> DiscreteInstance:
    """Random dense chain and payoff table; used by tests and oracle-check."""
    S = int(rng.integers(min_states, max_states + 1))
    K = int(rng.integers(min_dates, max_dates + 1))
    mats = []
    for _ in range(K):
        raw = rng.random((S, S)) + 0.05
        mats.append(raw / raw.sum(axis=1, keepdims=True))
    chain = DiscreteChainSpec(
        states=S, dates=K, initial=int(rng.integers(S)), transitions=tuple(mats)
    )
    return DiscreteInstance(chain=chain, payoff=TablePayoff(rng.random((K, S))))


def random_region(rng: np.random.Generator, dates: int, states: int) -> np.ndarray:
    """Uniform random product region (last date full)."""
    member = rng.random((dates, states)) < 0.5
    member[-1] = True
    return member
