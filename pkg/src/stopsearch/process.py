"""Path simulation for the two process kinds used throughout the package.

Both simulators hand back a ``PathSet``: an immutable batch of paths over
exercise dates 1..K together with the (seed, stream_id) pair that produced
it.  Regenerating a ``PathSet`` with identical spec, count, seed and stream
is bit-identical, and distinct stream ids never share random numbers, so
batches can be produced in any order (or in parallel) without changing a
single value.

Randomness comes from Philox, a counter-based generator.  Paths are drawn
in fixed blocks of ``_BLOCK`` and block b of stream s is keyed by
``SeedSequence(seed, spawn_key=(s, b))``, which makes every path value a
pure function of (seed, stream_id, path index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .errors import ParameterError

_BLOCK = 8192


@dataclass(frozen=True)
class GbmSpec:
    """Geometric Brownian motion sampled on an equispaced date grid.

    ``dim`` independent coordinates, all sharing rate, dividend and vol:
    X_{k+1} = X_k * exp((rate - dividend - vol^2/2) dt + vol sqrt(dt) Z).
    ``vol = 0.0`` is allowed (degenerate, deterministic paths; test use).
    """

    dim: int
    rate: float
    dividend: float
    vol: float
    spot: float
    horizon: float
    dates: int

    def __post_init__(self):
        if self.dim < 1:
            raise ParameterError("GbmSpec.dim must be >= 1")
        if self.vol < 0.0:
            raise ParameterError("GbmSpec.vol must be >= 0")
        if self.spot <= 0.0:
            raise ParameterError("GbmSpec.spot must be > 0")
        if self.horizon <= 0.0:
            raise ParameterError("GbmSpec.horizon must be > 0")
        if self.dates < 1:
            raise ParameterError("GbmSpec.dates must be >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.dates

    def date_times(self) -> np.ndarray:
        """Times t_k = k * horizon / dates for k = 1..dates."""
        return self.dt * np.arange(1, self.dates + 1)


@dataclass(frozen=True)
class DiscreteChainSpec:
    """Finite-state time-inhomogeneous chain on states 0..S-1.

    ``transitions`` holds K row-stochastic matrices: the first is the law
    of X_1 given the initial state, matrix k (k >= 1) moves X_k to X_{k+1}.
    Only dates 1..K are part of the paths; the initial state is spec data.
    """

    states: int
    dates: int
    initial: int
    transitions: tuple

    def __post_init__(self):
        if self.states < 1:
            raise ParameterError("DiscreteChainSpec.states must be >= 1")
        if self.dates < 1:
            raise ParameterError("DiscreteChainSpec.dates must be >= 1")
        if not 0 <= self.initial < self.states:
            raise ParameterError("DiscreteChainSpec.initial out of range")
        mats = tuple(np.asarray(p, dtype=np.float64) for p in self.transitions)
        if len(mats) != self.dates:
            raise ParameterError(
                f"DiscreteChainSpec needs {self.dates} transition matrices, got {len(mats)}"
            )
        for i, p in enumerate(mats):
            if p.shape != (self.states, self.states):
                raise ParameterError(f"transition matrix {i} has shape {p.shape}")
            if np.any(p < 0.0):
                raise ParameterError(f"transition matrix {i} has negative entries")
            if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-12:
                raise ParameterError(f"transition matrix {i} rows must sum to 1 within 1e-12")
            p.flags.writeable = False
        object.__setattr__(self, "transitions", mats)

    def marginals(self) -> np.ndarray:
        """Exact laws of X_1..X_K as a (dates, states) array."""
        out = np.empty((self.dates, self.states))
        row = self.transitions[0][self.initial]
        out[0] = row
        for k in range(1, self.dates):
            row = row @ self.transitions[k]
            out[k] = row
        return out


@dataclass(frozen=True)
class PathSet:
    """Immutable simulated batch: values[m, k] is path m at date k+1.

    GBM values have shape (count, dates, dim) float64; chain values have
    shape (count, dates) int64 state indices.
    """

    spec: object
    count: int
    seed: int
    stream_id: int
    values: np.ndarray

    def __post_init__(self):
        self.values.flags.writeable = False

    @property
    def stream_key(self) -> tuple:
        return (self.seed, self.stream_id)


def _block_rng(seed: int, stream_id: int, block: int) -> Generator:
    return Generator(Philox(SeedSequence(entropy=seed, spawn_key=(stream_id, block))))


def _check_sim_args(count: int, seed: int, stream_id: int):
    if count < 1:
        raise ParameterError("path count must be >= 1")
    if seed < 0 or stream_id < 0:
        raise ParameterError("seed and stream_id must be >= 0")


def simulate_gbm_paths(spec: GbmSpec, count: int, seed: int, stream_id: int) -> PathSet:
    """Draw ``count`` GBM paths on the date grid by exact log-Euler stepping.

    Exact in distribution per date (no discretization bias): increments of
    log X are iid normal with mean (rate - dividend - vol^2/2) dt and
    variance vol^2 dt.
    """
    _check_sim_args(count, seed, stream_id)
    K, d = spec.dates, spec.dim
    drift = (spec.rate - spec.dividend - 0.5 * spec.vol * spec.vol) * spec.dt
    scale = spec.vol * np.sqrt(spec.dt)
    values = np.empty((count, K, d))
    for start in range(0, count, _BLOCK):
        stop = min(start + _BLOCK, count)
        z = _block_rng(seed, stream_id, start // _BLOCK).standard_normal((stop - start, K, d))
        np.cumsum(drift + scale * z, axis=1, out=z)
        values[start:stop] = spec.spot * np.exp(z)
    return PathSet(spec=spec, count=count, seed=seed, stream_id=stream_id, values=values)


def simulate_discrete_paths(
    spec: DiscreteChainSpec, count: int, seed: int, stream_id: int
) -> PathSet:
    """Draw ``count`` chain paths; one uniform per (path, date), inverse CDF."""
    _check_sim_args(count, seed, stream_id)
    K = spec.dates
    # cum[k][s] = CDF over successor states; searchsorted-free via comparison count
    cum = [np.cumsum(p, axis=1) for p in spec.transitions]
    values = np.empty((count, K), dtype=np.int64)
    for start in range(0, count, _BLOCK):
        stop = min(start + _BLOCK, count)
        u = _block_rng(seed, stream_id, start // _BLOCK).random((stop - start, K))
        state = np.full(stop - start, spec.initial, dtype=np.int64)
        for k in range(K):
            # rows of cum end at 1 up to rounding; clip covers u above that
            state = np.minimum((u[:, k, None] > cum[k][state]).sum(axis=1), spec.states - 1)
            values[start:stop, k] = state
    return PathSet(spec=spec, count=count, seed=seed, stream_id=stream_id, values=values)


def simulate(spec, count: int, seed: int, stream_id: int) -> PathSet:
    """Dispatch on spec kind."""
    if isinstance(spec, GbmSpec):
        return simulate_gbm_paths(spec, count, seed, stream_id)
    if isinstance(spec, DiscreteChainSpec):
        return simulate_discrete_paths(spec, count, seed, stream_id)
    raise ParameterError(f"unknown process spec {type(spec).__name__}")
