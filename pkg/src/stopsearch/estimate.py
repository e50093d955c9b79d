"""Two-phase estimation and its diagnostic curves.

Phase one optimizes the region on a simulated batch; phase two values the
induced rule on fresh paths drawn from a disjoint stream.  Repeating phase
one over independent batches gives the batch statistics (mean, spread,
minimum evaluation error) and the three curves used to budget path counts:

  bias_curve(M)   = mean value at the reference batch size minus at M
  spread_curve(M) = sqrt of the replica spread at M (printed convention;
                    ``q2_convention="vartheta"`` uses the spread itself)
  eval_curve(N)   = min-over-replicas payoff stdev at N, divided by sqrt(N)

``vartheta`` follows the source convention throughout: it is the square
root of the 1/(L-1) empirical variance of the replica values, so it is a
standard deviation, and the default spread curve takes a further root.

Stream layout under one master seed: the fresh batch always uses stream 0;
optimization batch l of a single experiment uses stream l; the curve sweep
uses stream 1 + grid_index * replications + (l - 1).  Everything is
regenerable from (plan, seed) alone, in any order, on any thread count.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, StreamCollisionError
from .optimize import OptimizerConfig, optimize_regions
from .process import PathSet, simulate
from .stopping import PayoffSpec, RegionFamily, stopped_payoffs

FRESH_STREAM = 0


@dataclass(frozen=True)
class ExperimentPlan:
    """Sizes for one experiment and for the curve sweep around it.

    batch_size/fresh_size/replications drive a single experiment;
    the ref_* fields and batch_grid drive the curves, with the ref sizes
    serving as the baseline the bias curve is measured against.
    """

    batch_size: int
    fresh_size: int
    replications: int
    seed: int
    ref_batch_size: int = 0
    ref_fresh_size: int = 0
    ref_replications: int = 0
    batch_grid: tuple = ()
    fresh_grid: tuple = ()
    q2_convention: str = "sqrt_vartheta"

    def __post_init__(self):
        for name in ("batch_size", "fresh_size", "replications"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"ExperimentPlan.{name} must be positive")
        if int(self.seed) < 0:
            raise ParameterError("ExperimentPlan.seed must be nonnegative")
        if self.q2_convention not in ("sqrt_vartheta", "vartheta"):
            raise ParameterError("q2_convention must be sqrt_vartheta or vartheta")
        grid = tuple(int(m) for m in self.batch_grid)
        if any(m < 1 for m in grid):
            raise ParameterError("batch_grid entries must be >= 1")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ParameterError("batch_grid must be strictly increasing")
        if any(int(n) < 2 for n in self.fresh_grid):
            raise ParameterError("fresh_grid entries must be >= 2")
        object.__setattr__(self, "batch_grid", grid)
        object.__setattr__(self, "fresh_grid", tuple(int(n) for n in self.fresh_grid))

    def curve_sizes(self) -> tuple:
        """(ref_batch, ref_fresh, ref_replications) with single-run fallbacks."""
        return (
            self.ref_batch_size or self.batch_size,
            self.ref_fresh_size or self.fresh_size,
            self.ref_replications or self.replications,
        )


@dataclass(frozen=True)
class ReplicaResult:
    stream_id: int
    theta: tuple
    value: float
    sigma: float
    in_sample: float


@dataclass(frozen=True)
class BatchStats:
    """Aggregates over the optimization replicas; vartheta is the square
    root of the 1/(L-1) variance of the replica values, None when L=1."""

    mu: float
    vartheta: float
    sigma_min: float
    per_replica: tuple


@dataclass(frozen=True)
class QCurves:
    """The three diagnostic curves plus the budget pairs solved from them.

    q1/q2 are (M, value) pairs over the batch grid, q3 is (N, value) over
    the fresh grid, mn_pairs is (M, N) with N solving q2(M) = q3(N) by
    monotone log-log interpolation.  mu/vartheta/sigma are the underlying
    per-M statistics; degenerate flags an all-zero or nonpositive solve.
    """

    q1: tuple
    q2: tuple
    q3: tuple
    mn_pairs: tuple
    mu: tuple
    vartheta: tuple
    mu_ref: float
    sigma_ref: float
    q2_convention: str
    degenerate: bool


def _sample_std(values: np.ndarray) -> float:
    if values.shape[0] < 2:
        return 0.0
    return float(values.std(ddof=1))


def evaluate_out_of_sample(
    family: RegionFamily,
    theta,
    payoff: PayoffSpec,
    fresh: PathSet,
    used_streams=(),
) -> tuple:
    """Value the rule at theta on the fresh batch: (mean payoff, stdev).

    The fresh batch must come from a stream no optimization batch used;
    a collision raises StreamCollisionError.  A single-path batch has no
    sample deviation; by convention it reports 0 with a warning.
    """
    if fresh.stream_key in set(used_streams):
        raise StreamCollisionError(
            f"fresh batch reuses stream {fresh.stream_key} of an optimization batch"
        )
    pays = stopped_payoffs(family, theta, fresh, payoff)
    if pays.shape[0] == 1:
        warnings.warn("single-path evaluation: stdev reported as 0", RuntimeWarning)
    return float(pays.mean()), _sample_std(pays)


def _map_ordered(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_batch_experiment(
    process_spec,
    plan: ExperimentPlan,
    family: RegionFamily,
    payoff: PayoffSpec,
    config: OptimizerConfig = OptimizerConfig(),
    threads: int = 1,
    box=None,
) -> BatchStats:
    """L independent optimizations, each valued on one shared fresh batch.

    Batch l draws from stream l, the fresh batch from stream 0, all under
    plan.seed; replicas are order-independent, so any thread count gives
    identical output.
    """
    fresh = simulate(process_spec, plan.fresh_size, plan.seed, FRESH_STREAM)
    used = frozenset((plan.seed, l) for l in range(1, plan.replications + 1))

    def one(stream_id: int) -> ReplicaResult:
        batch = simulate(process_spec, plan.batch_size, plan.seed, stream_id)
        result = optimize_regions(family, payoff, batch, config, box)
        value, sigma = evaluate_out_of_sample(family, result.theta, payoff, fresh, used)
        return ReplicaResult(
            stream_id=stream_id,
            theta=tuple(result.theta.values),
            value=value,
            sigma=sigma,
            in_sample=result.value,
        )

    replicas = _map_ordered(one, range(1, plan.replications + 1), threads)
    values = np.array([r.value for r in replicas])
    vartheta = float(np.sqrt(values.var(ddof=1))) if values.shape[0] > 1 else None
    return BatchStats(
        mu=float(values.mean()),
        vartheta=vartheta,
        sigma_min=float(min(r.sigma for r in replicas)),
        per_replica=tuple(replicas),
    )


def _default_fresh_grid(fresh_size: int) -> tuple:
    grid = []
    n = fresh_size
    while n >= 2 and len(grid) < 7:
        grid.append(n)
        n //= 2
    return tuple(sorted(set(grid)))


def _solve_budget(n_grid: np.ndarray, q3: np.ndarray, target: float) -> float:
    """Leftmost N with the nonincreasing projection of q3 equal to target,
    linear in log-log, extrapolating with the nearest sloped segment."""
    proj = np.minimum.accumulate(q3)
    keep = proj > 0.0
    if target <= 0.0 or not keep.any():
        return float("nan")
    x = np.log(n_grid[keep].astype(np.float64))
    y = np.log(proj[keep])
    t = np.log(target)
    if x.shape[0] == 1:
        return float(n_grid[keep][0])

    def segment_solve(i: int) -> float:
        if y[i + 1] == y[i]:
            return x[i]
        frac = (t - y[i]) / (y[i + 1] - y[i])
        return x[i] + frac * (x[i + 1] - x[i])

    if t >= y[0]:
        sloped = np.nonzero(np.diff(y) < 0)[0]
        if not sloped.shape[0]:
            return float(np.exp(x[0]))
        return float(np.exp(min(segment_solve(sloped[0]), x[0])))
    for i in range(y.shape[0] - 1):
        if y[i + 1] <= t:
            return float(np.exp(segment_solve(i)))
    sloped = np.nonzero(np.diff(y) < 0)[0]
    if not sloped.shape[0]:
        return float(np.exp(x[-1]))
    return float(np.exp(segment_solve(sloped[-1])))


def compute_q_curves(
    process_spec,
    plan: ExperimentPlan,
    family: RegionFamily,
    payoff: PayoffSpec,
    config: OptimizerConfig = OptimizerConfig(),
    threads: int = 1,
    box=None,
) -> QCurves:
    """Tabulate the three curves over the plan's grids and solve the
    batch-for-fresh budget relation q2(M) = q3(N).

    The bias and spread curves reuse the reference sizes for every M; the
    evaluation curve comes from the reference batch size's replicas valued
    on nested prefixes of the one fresh batch.  The budget solve projects
    both curves to monotone before inverting, so the resulting (M, N)
    pairs are nondecreasing in M; raw curve values are reported untouched.
    """
    if not plan.batch_grid:
        raise ParameterError("compute_q_curves needs a nonempty batch_grid")
    ref_batch, ref_fresh, ref_reps = plan.curve_sizes()
    fresh = simulate(process_spec, ref_fresh, plan.seed, FRESH_STREAM)
    n_grid = np.array(plan.fresh_grid or _default_fresh_grid(ref_fresh), dtype=np.int64)
    if int(n_grid.max()) > ref_fresh:
        raise ParameterError("fresh_grid entries cannot exceed the reference fresh size")

    m_values = list(plan.batch_grid)
    ref_index = m_values.index(ref_batch) if ref_batch in m_values else len(m_values)
    if ref_index == len(m_values):
        m_values.append(ref_batch)
    used = frozenset(
        (plan.seed, 1 + i * ref_reps + l) for i in range(len(m_values)) for l in range(ref_reps)
    )
    if fresh.stream_key in used:
        raise StreamCollisionError("fresh stream collides with an optimization stream")

    def one(job: tuple) -> np.ndarray:
        i, l = job
        batch = simulate(process_spec, m_values[i], plan.seed, 1 + i * ref_reps + l)
        result = optimize_regions(family, payoff, batch, config, box)
        return stopped_payoffs(family, result.theta, fresh, payoff)

    jobs = [(i, l) for i in range(len(m_values)) for l in range(ref_reps)]
    payoff_rows = _map_ordered(one, jobs, threads)

    mu = np.empty(len(m_values))
    vartheta = np.empty(len(m_values))
    ref_payoffs = None
    for i in range(len(m_values)):
        rows = np.stack(payoff_rows[i * ref_reps : (i + 1) * ref_reps])
        values = rows.mean(axis=1)
        mu[i] = values.mean()
        vartheta[i] = np.sqrt(values.var(ddof=1)) if ref_reps > 1 else 0.0
        if i == ref_index:
            ref_payoffs = rows

    grid_count = len(plan.batch_grid)
    q2_of = (lambda v: float(np.sqrt(v))) if plan.q2_convention == "sqrt_vartheta" else float
    q1 = tuple((m, float(mu[ref_index] - mu[i])) for i, m in enumerate(m_values[:grid_count]))
    q2 = tuple((m, q2_of(vartheta[i])) for i, m in enumerate(m_values[:grid_count]))

    q3_vals = np.empty(n_grid.shape[0])
    for j, n in enumerate(n_grid):
        sig = min(_sample_std(ref_payoffs[l, :n]) for l in range(ref_reps))
        q3_vals[j] = sig / np.sqrt(n)
    q3 = tuple((int(n), float(v)) for n, v in zip(n_grid, q3_vals))

    degenerate = not (q3_vals > 0).any()
    targets = np.minimum.accumulate(np.array([v for _, v in q2]))
    pairs = []
    for i, m in enumerate(plan.batch_grid):
        solved = _solve_budget(n_grid, q3_vals, float(targets[i]))
        if np.isnan(solved):
            degenerate = True
            solved = float(n_grid[0])
        pairs.append((m, max(1.0, float(np.rint(solved)))))
    ns = np.maximum.accumulate(np.array([n for _, n in pairs]))
    mn_pairs = tuple((m, float(n)) for (m, _), n in zip(pairs, ns))

    return QCurves(
        q1=q1,
        q2=q2,
        q3=q3,
        mn_pairs=mn_pairs,
        mu=tuple(float(v) for v in mu[:grid_count]),
        vartheta=tuple(float(v) for v in vartheta[:grid_count]),
        mu_ref=float(mu[ref_index]),
        sigma_ref=float(min(_sample_std(ref_payoffs[l]) for l in range(ref_reps))),
        q2_convention=plan.q2_convention,
        degenerate=degenerate,
    )


def decomposition_report(curves: QCurves) -> tuple:
    """Rows (M, N, bias, spread, eval_error): the three error terms of the
    two-phase estimate, tabulated on the curve grids.  The bias column is
    measured against the reference mean, so the reference row is 0."""
    rows = []
    for (m, b), spread in zip(curves.q1, curves.vartheta):
        for n, e in curves.q3:
            rows.append((m, n, b, spread, e))
    return tuple(rows)
