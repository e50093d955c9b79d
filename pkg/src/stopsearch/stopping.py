"""Stopping regions, stopped payoffs, and pseudodistances between regions.

A stopping region assigns each exercise date k in 1..K a subset of the
state space; the induced rule stops at the first date whose subset
contains the current state.  Date K is always the whole space, so every
path stops.  Families are parametrized by a theta vector; a family with
``param_count == 0`` is a single fixed region.

Two computation routes exist for the stopped payoff of a path: the
explicit first-entry indicator sum (``pathwise_payoff``) and payoff lookup
at the first entry date (``first_entry_time`` + payoff).  They agree
exactly, term by term, and the batch functions are the vectorized form of
the same arithmetic.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import ConstructionError, ParameterError, UnsupportedOperationError
from .process import DiscreteChainSpec, PathSet


@dataclass(frozen=True)
class Box:
    """Axis-aligned parameter box, lower <= upper elementwise."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ParameterError("Box bounds must be 1-d arrays of equal length")
        if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)) or np.any(lo > hi):
            raise ParameterError("Box requires finite lower <= upper")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def clip(self, values: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(values, self.lower), self.upper)


@dataclass(frozen=True)
class ThetaVector:
    """A parameter point together with the box it lives in."""

    values: np.ndarray
    box: Box

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=np.float64))
        if v.shape != self.box.lower.shape:
            raise ParameterError("theta length does not match its box")
        if np.any(v < self.box.lower) or np.any(v > self.box.upper):
            raise ParameterError("theta outside its box")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def theta_values(theta) -> np.ndarray:
    """Accept a ThetaVector or a bare array; None means zero parameters."""
    if theta is None:
        return np.empty(0)
    if isinstance(theta, ThetaVector):
        return theta.values
    return np.atleast_1d(np.asarray(theta, dtype=np.float64))


class RegionFamily(ABC):
    """Parametric family of per-date stopping regions."""

    dates: int
    param_count: int

    @abstractmethod
    def contains(self, theta, k: int, x) -> bool:
        """Membership of state x in the date-k region (k is 1-based)."""

    @abstractmethod
    def membership(self, theta, values: np.ndarray) -> np.ndarray:
        """Vectorized membership over a path batch -> bool (count, dates)."""

    def default_box(self) -> Box:
        raise UnsupportedOperationError(f"{type(self).__name__} has no default box")

    def membership_workspace(self, values: np.ndarray):
        """Bind a path batch, returning a theta -> membership callable.

        Subclasses override this to hoist theta-independent features out
        of a many-candidate loop; the default closes over the raw batch.
        """
        return lambda theta: self.membership(theta, values)


class MaxCallRegion(RegionFamily):
    """Exercise when the intrinsic value exceeds theta[0] and the coordinate
    spread exceeds theta[1], both strictly; the last date is unconditional.

    Two-dimensional states only.  ``shared=False`` gives each of the first
    K-1 dates its own (theta1, theta2) pair, flattened date-major.
    """

    def __init__(self, strike: float, dates: int, shared: bool = True):
        if dates < 1:
            raise ParameterError("MaxCallRegion.dates must be >= 1")
        self.strike = float(strike)
        self.dates = int(dates)
        self.shared = bool(shared)
        self.param_count = 2 if shared else 2 * max(self.dates - 1, 1)

    def _date_theta(self, theta: np.ndarray, k: int) -> tuple:
        if theta.shape[0] != self.param_count:
            raise ParameterError(f"expected {self.param_count} parameters, got {theta.shape[0]}")
        if self.shared:
            return theta[0], theta[1]
        j = 2 * (k - 1)
        return theta[j], theta[j + 1]

    def contains(self, theta, k: int, x) -> bool:
        if not 1 <= k <= self.dates:
            raise ParameterError("date index out of range")
        if k == self.dates:
            return True
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (2,):
            raise ParameterError("MaxCallRegion is defined for 2-d states")
        t1, t2 = self._date_theta(theta_values(theta), k)
        intrinsic = max(max(x[0], x[1]) - self.strike, 0.0)
        return bool(intrinsic > t1 and abs(x[0] - x[1]) > t2)

    def _member_from(self, th: np.ndarray, intrinsic: np.ndarray, spread: np.ndarray) -> np.ndarray:
        if self.shared:
            member = (intrinsic > th[0]) & (spread > th[1])
        else:
            if th.shape[0] != self.param_count:
                raise ParameterError(f"expected {self.param_count} parameters, got {th.shape[0]}")
            t1 = np.zeros(self.dates)
            t2 = np.zeros(self.dates)
            t1[: self.dates - 1] = th[0::2][: self.dates - 1]
            t2[: self.dates - 1] = th[1::2][: self.dates - 1]
            member = (intrinsic > t1) & (spread > t2)
        member[:, -1] = True
        return member

    def membership_workspace(self, values: np.ndarray):
        if values.ndim != 3 or values.shape[2] != 2:
            raise ParameterError("MaxCallRegion is defined for 2-d states")
        intrinsic = np.maximum(values.max(axis=2) - self.strike, 0.0)
        spread = np.abs(values[:, :, 0] - values[:, :, 1])
        return lambda theta: self._member_from(theta_values(theta), intrinsic, spread)

    def membership(self, theta, values: np.ndarray) -> np.ndarray:
        return self.membership_workspace(values)(theta)

    def default_box(self) -> Box:
        return Box(np.zeros(self.param_count), np.full(self.param_count, 50.0))


class TableRegion(RegionFamily):
    """A fixed region given as a (dates, states) membership table."""

    def __init__(self, member: np.ndarray):
        member = np.asarray(member, dtype=bool)
        if member.ndim != 2:
            raise ConstructionError("TableRegion takes a (dates, states) table")
        if not member[-1].all():
            raise ConstructionError("the last date of a region must cover every state")
        member.flags.writeable = False
        self.member = member
        self.dates = member.shape[0]
        self.states = member.shape[1]
        self.param_count = 0

    def contains(self, theta, k: int, x) -> bool:
        return bool(self.member[k - 1, int(x)])

    def membership(self, theta, values: np.ndarray) -> np.ndarray:
        K = self.dates
        return self.member[np.arange(K)[None, :], values]


class IndexedTableRegion(RegionFamily):
    """Every product region over a finite state space, indexed by one scalar.

    theta[0] rounds to an integer whose bits (state-major within date, dates
    first) pick the membership of each (date < K, state) cell; date K is
    always full.  Gives grid search a complete, ordered catalogue of the
    2^(states*(dates-1)) regions.
    """

    def __init__(self, dates: int, states: int):
        if dates < 1 or states < 1:
            raise ParameterError("IndexedTableRegion needs dates >= 1, states >= 1")
        self.dates = dates
        self.states = states
        self.bits = states * (dates - 1)
        self.param_count = 1

    def decode(self, theta) -> np.ndarray:
        idx = int(round(float(theta_values(theta)[0])))
        idx = min(max(idx, 0), (1 << self.bits) - 1)
        member = np.ones((self.dates, self.states), dtype=bool)
        for k in range(self.dates - 1):
            for s in range(self.states):
                member[k, s] = bool((idx >> (k * self.states + s)) & 1)
        return member

    def contains(self, theta, k: int, x) -> bool:
        return bool(self.decode(theta)[k - 1, int(x)])

    def membership(self, theta, values: np.ndarray) -> np.ndarray:
        member = self.decode(theta)
        return member[np.arange(self.dates)[None, :], values]

    def default_box(self) -> Box:
        return Box(np.zeros(1), np.array([float((1 << self.bits) - 1)]))


class BoundaryRegion(RegionFamily):
    """Two-date rule: stop at date 1 iff x[1] <= boundary(x[0])."""

    def __init__(self, boundary):
        self.boundary = boundary
        self.dates = 2
        self.param_count = 0

    def contains(self, theta, k: int, x) -> bool:
        if k >= 2:
            return True
        x = np.asarray(x, dtype=np.float64)
        return bool(x[1] <= self.boundary(x[0]))

    def membership(self, theta, values: np.ndarray) -> np.ndarray:
        member = np.ones(values.shape[:2], dtype=bool)
        member[:, 0] = values[:, 0, 1] <= self.boundary(values[:, 0, 0])
        return member


class PayoffSpec(ABC):
    """Per-date payoff G_k(x) >= 0 evaluated on states."""

    @abstractmethod
    def value(self, k: int, x) -> float:
        """Payoff at date k (1-based) in state x."""

    @abstractmethod
    def matrix(self, values: np.ndarray) -> np.ndarray:
        """Vectorized payoffs over a path batch -> (count, dates)."""

    def sup_norm(self) -> float:
        raise UnsupportedOperationError(f"{type(self).__name__} has no finite sup norm")


class MaxCallPayoff(PayoffSpec):
    """(max over coordinates - strike)^+, optionally discounted to time 0.

    ``discount_rate = 0`` is the plain intrinsic payoff; with a positive
    rate, date k pays e^{-rate * times[k-1]} times the intrinsic value,
    which is the convention under which the published benchmark values for
    the two-asset max-call were computed.
    """

    def __init__(self, strike: float, times, discount_rate: float = 0.0):
        self.strike = float(strike)
        self.times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        self.discount_rate = float(discount_rate)
        if np.any(np.diff(self.times) <= 0) or np.any(self.times <= 0):
            raise ParameterError("payoff times must be positive and increasing")
        self.factors = np.exp(-self.discount_rate * self.times)
        self.factors.flags.writeable = False

    @classmethod
    def for_process(cls, spec, strike: float, discounted: bool = True) -> "MaxCallPayoff":
        rate = spec.rate if discounted else 0.0
        return cls(strike=strike, times=spec.date_times(), discount_rate=rate)

    def value(self, k: int, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(self.factors[k - 1] * max(x.max() - self.strike, 0.0))

    def matrix(self, values: np.ndarray) -> np.ndarray:
        return self.factors * np.maximum(values.max(axis=2) - self.strike, 0.0)


class TablePayoff(PayoffSpec):
    """Payoffs on a finite state space as a (dates, states) table."""

    def __init__(self, values: np.ndarray):
        table = np.asarray(values, dtype=np.float64)
        if table.ndim != 2:
            raise ConstructionError("TablePayoff takes a (dates, states) table")
        if np.any(table < 0.0):
            raise ConstructionError("payoffs must be nonnegative")
        table.flags.writeable = False
        self.table = table
        self.dates = table.shape[0]
        self.states = table.shape[1]

    def value(self, k: int, x) -> float:
        return float(self.table[k - 1, int(x)])

    def matrix(self, values: np.ndarray) -> np.ndarray:
        return self.table[np.arange(self.dates)[None, :], values]

    def sup_norm(self) -> float:
        return float(np.abs(self.table).max())


class TwoDatePayoff(PayoffSpec):
    """Date 1 pays g1(x); date 2 pays the realized binary outcome stored as
    the third sample coordinate."""

    def __init__(self, g1):
        self.g1 = g1

    def value(self, k: int, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(self.g1(x[0], x[1])) if k == 1 else float(x[2])

    def matrix(self, values: np.ndarray) -> np.ndarray:
        out = np.empty(values.shape[:2])
        out[:, 0] = self.g1(values[:, 0, 0], values[:, 0, 1])
        out[:, 1] = values[:, 1, 2]
        return out


def first_entry_time(path: np.ndarray, family: RegionFamily, theta) -> int:
    """First date (1-based) whose region contains the path state.

    Always defined: the date-K region is the whole space.
    """
    for k in range(1, family.dates + 1):
        if family.contains(theta, k, path[k - 1]):
            return k
    raise AssertionError("unreachable: last date must stop")


def pathwise_payoff(path: np.ndarray, family: RegionFamily, theta, payoff: PayoffSpec) -> float:
    """Stopped payoff of one path via the explicit indicator sum.

    sum_k G_k(x_k) * 1{x_1 not in S_1, ..., x_{k-1} not in S_{k-1}, x_k in S_k};
    equals payoff at ``first_entry_time`` exactly (one term survives).
    """
    total = 0.0
    alive = 1.0
    for k in range(1, family.dates + 1):
        inside = 1.0 if family.contains(theta, k, path[k - 1]) else 0.0
        total += payoff.value(k, path[k - 1]) * alive * inside
        alive *= 1.0 - inside
    return total


def entry_dates(family: RegionFamily, theta, paths: PathSet) -> np.ndarray:
    """First entry dates (1-based) for every path in the batch."""
    member = family.membership(theta, paths.values)
    return np.argmax(member, axis=1).astype(np.int64) + 1


def stopped_payoffs(family: RegionFamily, theta, paths: PathSet, payoff: PayoffSpec) -> np.ndarray:
    """Stopped payoff of every path in the batch (vectorized route)."""
    member = family.membership(theta, paths.values)
    tau = np.argmax(member, axis=1)
    pay = payoff.matrix(paths.values)
    return pay[np.arange(paths.count), tau]


def membership_table(family: RegionFamily, theta, chain: DiscreteChainSpec) -> np.ndarray:
    """Region membership over a finite state space -> (dates, states) bool."""
    if isinstance(family, TableRegion):
        return family.member
    if isinstance(family, IndexedTableRegion):
        return family.decode(theta)
    if family.dates != chain.dates:
        raise ParameterError("region and chain date counts differ")
    out = np.empty((chain.dates, chain.states), dtype=bool)
    for k in range(1, chain.dates + 1):
        for s in range(chain.states):
            out[k - 1, s] = family.contains(theta, k, s)
    return out


def region_distance(family_a, theta_a, family_b, theta_b, sampler) -> tuple:
    """Sum over dates of the mass of the per-date membership symmetric
    difference.  Returns (value, stderr); exact (stderr 0) on a chain spec,
    Monte Carlo on a PathSet.

    The date-K term is kept in the sum even though both regions cover the
    whole space there, so it contributes exactly zero.
    """
    if family_a.dates != family_b.dates:
        raise ParameterError("regions must share the date count")
    if isinstance(sampler, DiscreteChainSpec):
        mem_a = membership_table(family_a, theta_a, sampler)
        mem_b = membership_table(family_b, theta_b, sampler)
        marg = sampler.marginals()
        value = float(np.sum(marg * (mem_a ^ mem_b)))
        return value, 0.0
    if isinstance(sampler, PathSet):
        mem_a = family_a.membership(theta_a, sampler.values)
        mem_b = family_b.membership(theta_b, sampler.values)
        per_path = (mem_a ^ mem_b).sum(axis=1).astype(np.float64)
        value = float(per_path.mean())
        stderr = float(per_path.std(ddof=1) / np.sqrt(sampler.count)) if sampler.count > 1 else 0.0
        return value, stderr
    raise ParameterError(f"unsupported sampler {type(sampler).__name__}")


def effective_region_distance(
    family_a, theta_a, family_b, theta_b, chain: DiscreteChainSpec
) -> float:
    """Masked symmetric-difference pseudodistance, exact on a chain spec.

    The date-k term weights each disagreement state by the probability of
    reaching it with the second rule not yet stopped: once that rule has
    exercised, later disagreement cannot change its payoff.  Defined
    through the second argument's survival, so the function is asymmetric;
    it never exceeds ``region_distance`` because survival mass is at most
    the marginal.
    """
    if not isinstance(chain, DiscreteChainSpec):
        raise UnsupportedOperationError(
            "effective_region_distance is exact-only; it needs a DiscreteChainSpec"
        )
    if family_a.dates != family_b.dates:
        raise ParameterError("regions must share the date count")
    mem_a = membership_table(family_a, theta_a, chain)
    mem_b = membership_table(family_b, theta_b, chain)
    total = 0.0
    alive = chain.transitions[0][chain.initial].copy()
    for k in range(chain.dates):
        total += float(alive @ (mem_a[k] ^ mem_b[k]).astype(np.float64))
        if k + 1 < chain.dates:
            alive = (alive * ~mem_b[k]) @ chain.transitions[k + 1]
    return total
