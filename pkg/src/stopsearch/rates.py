"""Closed-form convergence-rate exponents and the batch budget rule.

Pure functions.  The optimization-error exponent is

    (1 + alpha) / (2 + alpha * (1 + rho))

with alpha the margin exponent and rho the metric complexity of the
region family.  The smoothness-driven worst case plugs in
rho = (dim - 1) / gamma; both entry points share one expression so the
two agree bit for bit whenever both are defined.
"""

from __future__ import annotations

from .errors import ParameterError


def _exponent(alpha: float, rho: float) -> float:
    return (1.0 + alpha) / (2.0 + alpha * (1.0 + rho))


def upper_rate_exponent(alpha: float, rho: float) -> float:
    """Guaranteed decay exponent of the regret in the batch size.

    Valid for alpha > 0 and complexity 0 <= rho <= 1 (rho = 0 is the
    vanishing-complexity limit); the value lies in [1/2, 1), hitting 1/2
    exactly at rho = 1 and approaching 1 as the margin sharpens.
    """
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    if not 0.0 <= rho <= 1.0:
        raise ParameterError("rho must lie in [0, 1]")
    return _exponent(alpha, rho)


def lower_rate_exponent(alpha: float, gamma: float, dim: int) -> float:
    """Unimprovable exponent over gamma-smooth stopping boundaries in
    dimension dim: the rate formula at complexity (dim - 1) / gamma."""
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    if int(dim) != dim or dim < 2:
        raise ParameterError("dim must be an integer >= 2")
    return _exponent(alpha, (dim - 1) / gamma)


def batch_for_fresh(fresh_count: int, alpha: float, rho: float) -> int:
    """Optimization batch size matched to a fresh evaluation batch so
    neither error term dominates: round(N^((2 + alpha(1+rho)) / (2(1+alpha)))).

    With alpha = 1 and rho = 0 the exponent is exactly 3/4.
    """
    if fresh_count < 1:
        raise ParameterError("fresh_count must be >= 1")
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    if not 0.0 <= rho <= 1.0:
        raise ParameterError("rho must lie in [0, 1]")
    exponent = (2.0 + alpha * (1.0 + rho)) / (2.0 * (1.0 + alpha))
    return max(1, int(round(fresh_count**exponent)))


def holder_entropy_exponent(gamma: float, dim: int, dates: int) -> float:
    """Metric complexity of region families cut out by gamma-smooth
    boundaries: (dates - 1) * (dim - 1) / gamma.  One boundary per
    decision date; dim = 1 has zero-dimensional boundaries, so 0."""
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    if int(dim) != dim or dim < 1:
        raise ParameterError("dim must be an integer >= 1")
    if int(dates) != dates or dates < 1:
        raise ParameterError("dates must be an integer >= 1")
    return (dates - 1) * (dim - 1) / gamma
