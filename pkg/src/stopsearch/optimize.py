"""In-sample region optimization: grid scan plus compass refinement.

The objective -- mean stopped payoff over a fixed path batch -- is
piecewise constant in theta (it only changes when some path's membership
flips), so gradients are useless and exact value ties are common.  The
search is therefore derivative-free and totally ordered: higher value
wins, equal value goes to the lexicographically smallest theta, making
the result independent of evaluation order.

Common random numbers are implicit: one batch, every candidate evaluated
on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .process import PathSet
from .stopping import Box, PayoffSpec, RegionFamily, ThetaVector, theta_values


@dataclass(frozen=True)
class OptimizerConfig:
    grid_points_per_dim: int = 33
    refine_rounds: int = 3
    refine_top_k: int = 3
    pattern_shrink: float = 0.5
    max_moves_per_round: int = 100

    def __post_init__(self):
        if self.grid_points_per_dim < 1:
            raise ParameterError("grid_points_per_dim must be >= 1")
        if self.refine_rounds < 0 or self.refine_top_k < 1:
            raise ParameterError("refine_rounds must be >= 0, refine_top_k >= 1")
        if not 0.0 < self.pattern_shrink < 1.0:
            raise ParameterError("pattern_shrink must be in (0, 1)")
        if self.max_moves_per_round < 1:
            raise ParameterError("max_moves_per_round must be >= 1")


@dataclass(frozen=True)
class OptimizeResult:
    theta: ThetaVector
    value: float
    evaluations: int
    trace: tuple


class _Evaluator:
    """Caches per-batch features so each theta costs one membership pass."""

    def __init__(self, family: RegionFamily, payoff: PayoffSpec, paths: PathSet):
        self.member_fn = family.membership_workspace(paths.values)
        self.pay = payoff.matrix(paths.values)
        self.rows = np.arange(paths.count)
        self.count = 0
        self.cache = {}

    def __call__(self, theta: np.ndarray) -> float:
        key = theta.tobytes()
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        member = self.member_fn(theta)
        value = float(self.pay[self.rows, np.argmax(member, axis=1)].mean())
        self.count += 1
        self.cache[key] = value
        return value


def empirical_value(family: RegionFamily, theta, paths: PathSet, payoff: PayoffSpec) -> float:
    """Mean stopped payoff of the batch under the region at theta."""
    return _Evaluator(family, payoff, paths)(theta_values(theta))


def _better(value, theta_t, best_value, best_theta_t) -> bool:
    if value != best_value:
        return value > best_value
    return theta_t < best_theta_t


def optimize_regions(
    family: RegionFamily,
    payoff: PayoffSpec,
    paths: PathSet,
    config: OptimizerConfig = OptimizerConfig(),
    box: Box = None,
) -> OptimizeResult:
    """Maximize the empirical value over the family's parameter box.

    Full grid scan, then compass search from the ``refine_top_k`` best grid
    points with the step shrinking by ``pattern_shrink`` each round.  Every
    candidate is clipped to the box.  The reported value is the objective
    at the reported theta, bit for bit.
    """
    if box is None:
        box = family.default_box()
    if box.dim != family.param_count:
        raise ParameterError("box dimension does not match the family's parameter count")
    evaluate = _Evaluator(family, payoff, paths)

    axes = [
        np.linspace(box.lower[i], box.upper[i], config.grid_points_per_dim)
        for i in range(box.dim)
    ]
    spacing = np.array(
        [ax[1] - ax[0] if ax.shape[0] > 1 else (box.upper[i] - box.lower[i]) or 1.0
         for i, ax in enumerate(axes)]
    )
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)

    scored = []
    for point in grid:
        scored.append((evaluate(point), tuple(point)))
    scored.sort(key=lambda sv: (-sv[0], sv[1]))
    best_value, best_theta = scored[0]
    trace = [("grid", best_value)]

    for start_value, start_theta in scored[: config.refine_top_k]:
        value, theta = start_value, np.array(start_theta)
        step = spacing.copy()
        for _ in range(config.refine_rounds):
            for _ in range(config.max_moves_per_round):
                move_value, move_theta = value, tuple(theta)
                for i in range(box.dim):
                    for sign in (-1.0, 1.0):
                        probe = theta.copy()
                        probe[i] += sign * step[i]
                        probe = box.clip(probe)
                        pv = evaluate(probe)
                        if pv > move_value or (pv == move_value and tuple(probe) < move_theta):
                            move_value, move_theta = pv, tuple(probe)
                if move_value <= value:
                    break
                value, theta = move_value, np.array(move_theta)
                trace.append(("move", value))
            step = step * config.pattern_shrink
        if _better(value, tuple(theta), best_value, best_theta):
            best_value, best_theta = value, tuple(theta)

    theta_vec = ThetaVector(values=np.array(best_theta), box=box)
    return OptimizeResult(
        theta=theta_vec, value=best_value, evaluations=evaluate.count, trace=tuple(trace)
    )
