"""Hard two-date instances with a tunable margin and boundary smoothness.

Each instance lives on the unit square: the date-1 state is uniform, the
date-2 payoff is a single binary outcome whose success probability equals
the date-1 continuation value.  A hidden bit vector plants smooth bumps
into the stop/continue boundary, and the continuation value sits exactly
``amp * bumps^(-gamma/alpha)`` above or below the immediate payoff on a
thin strip, so the margin exponent alpha, the boundary smoothness gamma,
and the optimal rule are all known in closed form.  Regret against the
optimal rule is then computable by one-dimensional quadrature, which is
what makes these instances usable as a ground-truth learning benchmark.

Rules are boundary form throughout: stop at date 1 iff x2 <= h(x1).  That
family contains the optimal rule, every plug-in estimate, and the trivial
always/never-stop rules, and off the strip all rules tie anyway.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConstructionError, ParameterError
from .process import _BLOCK, PathSet, _block_rng
from .stopping import BoundaryRegion, TwoDatePayoff

_OMEGA_STREAM = 1 << 20
_GL_NODES = {}


def _gauss(n: int) -> tuple:
    if n not in _GL_NODES:
        _GL_NODES[n] = np.polynomial.legendre.leggauss(n)
    return _GL_NODES[n]


def bump(z) -> np.ndarray:
    """The standard mollifier exp(1 - 1/(1-z^2)) on |z| < 1, peak value 1."""
    z = np.asarray(z, dtype=np.float64)
    inside = np.abs(z) < 1.0
    safe = np.where(inside, z, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - safe * safe)), 0.0)


def _bump_integral(hi: float, n: int = 200) -> float:
    """Integral of the mollifier over [-1, min(hi, 1)]."""
    hi = min(hi, 1.0)
    if hi <= -1.0:
        return 0.0
    nodes, weights = _gauss(n)
    mid, half = (hi - 1.0) / 2.0, (hi + 1.0) / 2.0
    return float(half * (weights @ bump(mid + half * nodes)))


@dataclass(frozen=True)
class LowerBoundSpec:
    """Geometry and hidden bits of one hard two-date instance.

    ``height`` scales the strip, ``amp`` the continuation gap; ``omega``
    holds the planted bits.  The constructor rejects any combination that
    lets the success probability leave (0,1).
    """

    bumps: int
    gamma: float
    alpha: float
    height: float
    amp: float
    omega: tuple
    g1_intercept: float = 0.3
    g1_slope: float = 0.4
    density: str = "uniform"

    def __post_init__(self):
        if self.bumps < 1:
            raise ConstructionError("bumps must be >= 1")
        if self.gamma <= 0 or self.alpha <= 0:
            raise ConstructionError("gamma and alpha must be positive")
        if not 0.0 < self.height < 1.0:
            raise ConstructionError("height must lie in (0, 1)")
        if self.amp <= 0:
            raise ConstructionError("amp must be positive")
        if self.density != "uniform":
            raise ConstructionError("only the uniform density is implemented")
        omega = tuple(int(b) for b in self.omega)
        if len(omega) != self.bumps or any(b not in (0, 1) for b in omega):
            raise ConstructionError("omega must be a 0/1 vector of length bumps")
        object.__setattr__(self, "omega", omega)
        lo = self.g1_intercept + min(0.0, self.g1_slope)
        hi = self.g1_intercept + max(0.0, self.g1_slope)
        if lo - self.shift <= 0.0 or hi + self.shift >= 1.0:
            raise ConstructionError(
                "success probability leaves (0,1): need "
                f"amp * bumps^(-gamma/alpha) = {self.shift:.6g} below "
                f"min(G1) = {lo:.6g} and below 1 - max(G1) = {1.0 - hi:.6g}"
            )

    @property
    def shift(self) -> float:
        """Continuation-value gap on the strip."""
        return self.amp * self.bumps ** (-self.gamma / self.alpha)

    @property
    def strip_top(self) -> float:
        """Upper edge of the strip where stopping and continuing differ."""
        return self.height * self.bumps ** (-self.gamma)

    @property
    def density_sup(self) -> float:
        return 1.0

    def g1(self, x1):
        return self.g1_intercept + self.g1_slope * np.asarray(x1, dtype=np.float64)

    def boundary(self, z) -> np.ndarray:
        """Stop/continue boundary b(z): the planted sum of bump curves."""
        return _boundary_curve(z, np.array(self.omega, dtype=np.float64), self)

    def success_prob(self, x1, x2) -> np.ndarray:
        """Date-2 success probability, which is the continuation value."""
        x1 = np.asarray(x1, dtype=np.float64)
        x2 = np.asarray(x2, dtype=np.float64)
        below = x2 <= self.boundary(x1)
        on_strip = x2 <= self.strip_top
        nudge = np.where(below, -self.shift, self.shift)
        return self.g1(x1) + np.where(on_strip, nudge, 0.0)

    def cell_masses(self) -> np.ndarray:
        """Area under each bump curve inside the square (bit set or not)."""
        return _cell_masses(self.bumps, self.gamma, self.height)

    def mean_success(self) -> float:
        """Exact expectation of the binary date-2 outcome."""
        planted = float(np.array(self.omega) @ self.cell_masses())
        base = self.g1_intercept + self.g1_slope / 2.0
        return base + self.shift * (self.strip_top - 2.0 * planted)


def _boundary_curve(z, bits: np.ndarray, spec: LowerBoundSpec) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    u = spec.bumps * z
    cell = np.floor(u / 2.0).astype(np.int64)
    valid = (cell >= 0) & (cell < spec.bumps)
    arg = u - (2 * np.clip(cell, 0, spec.bumps - 1) + 1)
    scale = spec.height * spec.bumps ** (-spec.gamma)
    return np.where(valid, bits[np.clip(cell, 0, spec.bumps - 1)] * scale * bump(arg), 0.0)


def _cell_masses_key(bumps: int, gamma: float, height: float) -> np.ndarray:
    scale = height * bumps ** (-gamma) / bumps
    out = np.empty(bumps)
    for j in range(1, bumps + 1):
        out[j - 1] = scale * _bump_integral(float(bumps - (2 * j - 1)))
    return out


_MASS_CACHE = {}


def _cell_masses(bumps: int, gamma: float, height: float) -> np.ndarray:
    key = (bumps, gamma, height)
    if key not in _MASS_CACHE:
        _MASS_CACHE[key] = _cell_masses_key(*key)
    return _MASS_CACHE[key]


def build_instance(
    bumps: int,
    gamma: float,
    alpha: float,
    height: float,
    amp: float,
    omega=None,
    g1_intercept: float = 0.3,
    g1_slope: float = 0.4,
) -> LowerBoundSpec:
    """Validated instance; ``omega=None`` plants every bump."""
    if omega is None:
        omega = (1,) * int(bumps)
    return LowerBoundSpec(
        bumps=int(bumps),
        gamma=float(gamma),
        alpha=float(alpha),
        height=float(height),
        amp=float(amp),
        omega=tuple(omega),
        g1_intercept=float(g1_intercept),
        g1_slope=float(g1_slope),
    )


def payoff_for(spec: LowerBoundSpec) -> TwoDatePayoff:
    return TwoDatePayoff(lambda x1, x2: spec.g1(x1))


def optimal_rule(spec: LowerBoundSpec) -> BoundaryRegion:
    """Stop at date 1 iff x2 <= b(x1); ties off the strip are free."""
    return BoundaryRegion(spec.boundary)


@dataclass(frozen=True)
class TwoDateSample:
    x1: tuple
    g2: int


def sample(spec: LowerBoundSpec, count: int, seed: int, stream_id: int = 1) -> PathSet:
    """Draw (state, binary outcome) pairs as a two-date PathSet.

    Path layout: date 1 stores (x1, x2, 0), date 2 stores (x1, x2, g2).
    Block-keyed generation, so regeneration is bit-identical and order
    independent for any count.
    """
    if count < 1:
        raise ParameterError("count must be >= 1")
    values = np.empty((count, 2, 3))
    for block, start in enumerate(range(0, count, _BLOCK)):
        stop = min(start + _BLOCK, count)
        draws = _block_rng(seed, stream_id, block).random((stop - start, 3))
        x1, x2 = draws[:, 0], draws[:, 1]
        g2 = (draws[:, 2] < spec.success_prob(x1, x2)).astype(np.float64)
        values[start:stop, 0, 0] = x1
        values[start:stop, 0, 1] = x2
        values[start:stop, 0, 2] = 0.0
        values[start:stop, 1, 0] = x1
        values[start:stop, 1, 1] = x2
        values[start:stop, 1, 2] = g2
    return PathSet(spec=spec, count=count, seed=seed, stream_id=stream_id, values=values)


def samples_view(paths: PathSet) -> tuple:
    """The same batch as (state, outcome) records, for small-count work."""
    return tuple(
        TwoDateSample(x1=(float(row[0, 0]), float(row[0, 1])), g2=int(row[1, 2]))
        for row in paths.values
    )


def margin_check(spec: LowerBoundSpec, etas) -> tuple:
    """Rows (eta, P(0 < |gap| <= eta), bound, ok).

    The gap between stopping and continuing takes exactly two values, 0
    off the strip and ``shift`` on it, so the probability is the strip
    mass once eta reaches the shift and 0 before; the bound is
    height * density_sup * amp^(-alpha) * eta^alpha.
    """
    rows = []
    for eta in etas:
        eta = float(eta)
        if eta < 0:
            raise ParameterError("margin thresholds must be nonnegative")
        prob = spec.strip_top if eta >= spec.shift else 0.0
        bound = spec.height * spec.density_sup * spec.amp ** (-spec.alpha) * eta**spec.alpha
        rows.append((eta, prob, bound, prob <= bound + 1e-12))
    return tuple(rows)


def margin_exponent_estimate(specs) -> float:
    """Recover alpha from a family sharing (gamma, alpha, height, amp) but
    varying the bump count: the margin probability steps up at the shift,
    and log(step mass) is linear in log(shift) with slope alpha."""
    pts = {(s.shift, s.strip_top) for s in specs}
    if len(pts) < 2:
        raise ParameterError("need at least two distinct bump counts")
    xs = np.log([p[0] for p in sorted(pts)])
    ys = np.log([p[1] for p in sorted(pts)])
    return float(np.polyfit(xs, ys, 1)[0])


def _rule_boundary(spec: LowerBoundSpec, rule):
    if isinstance(rule, BoundaryRegion):
        return rule.boundary
    if callable(rule):
        return rule
    bits = np.asarray(rule, dtype=np.float64)
    if bits.shape != (spec.bumps,):
        raise ParameterError("bit-vector rule must have one bit per bump")
    return None, bits


def regret(spec: LowerBoundSpec, rule) -> float:
    """Exact value loss of a rule against the optimal one.

    Only strip disagreement costs anything, and it costs ``shift`` per
    unit mass, so the regret is shift times the area between the rule's
    boundary (clipped to the strip) and the planted boundary.  A 0/1
    vector is scored per cell without quadrature; a callable or
    BoundaryRegion is integrated piecewise with node doubling to 1e-10.
    """
    resolved = _rule_boundary(spec, rule)
    if isinstance(resolved, tuple):
        _, bits = resolved
        planted = np.array(spec.omega, dtype=np.float64)
        return spec.shift * float(np.abs(bits - planted) @ spec.cell_masses())
    h = resolved

    def gap(z: np.ndarray) -> np.ndarray:
        guess = np.clip(np.asarray(h(z), dtype=np.float64), 0.0, spec.strip_top)
        return np.abs(guess - spec.boundary(z))

    # split at every cell edge and center so each piece is smooth up to
    # the kinks the absolute value itself introduces
    edges = np.unique(np.concatenate([np.arange(spec.bumps + 1) / spec.bumps, [1.0]]))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        mid, half = (a + b) / 2.0, (b - a) / 2.0
        last = None
        for n in (32, 64, 128, 256, 512, 1024):
            nodes, weights = _gauss(n)
            piece = float(half * (weights @ gap(mid + half * nodes)))
            if last is not None and abs(piece - last) <= 1e-10:
                break
            last = piece
        total += piece
    return spec.shift * total


def estimate_bits(spec: LowerBoundSpec, paths: PathSet) -> np.ndarray:
    """Plug-in boundary learner: per cell, compare the empirical success
    frequency under each bump curve against the immediate payoff and keep
    the bump iff continuing looks no better (ties stop, like everywhere
    else in the package).  Reads only the published geometry, never the
    planted bits.  Cells with no samples under the curve default to the
    tie side.
    """
    x1 = paths.values[:, 0, 0]
    x2 = paths.values[:, 0, 1]
    g2 = paths.values[:, 1, 2]
    u = spec.bumps * x1
    cell = np.floor(u / 2.0).astype(np.int64)
    valid = (cell >= 0) & (cell < spec.bumps)
    curve = _boundary_curve(x1, np.ones(spec.bumps), spec)
    sel = valid & (x2 <= curve)
    score = np.bincount(cell[sel], weights=(g2 - spec.g1(x1))[sel], minlength=spec.bumps)
    return (score <= 0.0).astype(np.int64)


def bump_count_for(count: int, gamma: float, alpha: float, scale: float = 1.0) -> int:
    """Bump count matched to the sample size so per-cell evidence stays at
    constant strength; the exponent is 1/(gamma + 2 gamma/alpha + 1)."""
    exponent = 1.0 / (gamma + 2.0 * gamma / alpha + 1.0)
    return max(1, int(round(scale * count**exponent)))


@dataclass(frozen=True)
class LearningCurve:
    rows: tuple
    slope: float


def learning_curve(
    base: LowerBoundSpec,
    batch_grid,
    replications: int,
    seed: int,
    bumps_for=None,
    learner=None,
) -> LearningCurve:
    """Mean exact regret of a learner across sample sizes.

    For each size the bump count is rescaled (default: the matched-growth
    rule above), the bits are redrawn uniformly each replication, and the
    learner sees the geometry plus samples but never the bits.  Rows are
    (count, mean regret, stderr); the slope is the log-log fit over rows
    with positive mean.  Same seed, same table, whatever the order.
    """
    if replications < 1:
        raise ParameterError("replications must be >= 1")
    batch_grid = [int(m) for m in batch_grid]
    if any(b <= a for a, b in zip(batch_grid, batch_grid[1:])) or not batch_grid:
        raise ParameterError("batch_grid must be nonempty and strictly increasing")
    if bumps_for is None:
        bumps_for = lambda count: bump_count_for(count, base.gamma, base.alpha)
    learn = learner or estimate_bits

    rows = []
    for i, count in enumerate(batch_grid):
        cells = bumps_for(count)
        regrets = np.empty(replications)
        for r in range(replications):
            bit_rng = _block_rng(seed, _OMEGA_STREAM + i, r)
            bits = bit_rng.integers(0, 2, size=cells)
            inst = replace(base, bumps=cells, omega=tuple(int(b) for b in bits))
            paths = sample(inst, count, seed, stream_id=1 + i * replications + r)
            regrets[r] = regret(inst, learn(inst, paths))
        err = float(regrets.std(ddof=1) / math.sqrt(replications)) if replications > 1 else 0.0
        rows.append((count, float(regrets.mean()), err))

    kept = [(c, v) for c, v, _ in rows if v > 0]
    if len(kept) >= 2:
        slope = float(np.polyfit(np.log([c for c, _ in kept]), np.log([v for _, v in kept]), 1)[0])
    else:
        slope = float("nan")
    return LearningCurve(rows=tuple(rows), slope=slope)
