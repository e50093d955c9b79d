"""The hard two-date family: geometry, margins, exact regret, learning."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from stopsearch.adversarial import (
    LowerBoundSpec,
    build_instance,
    bump,
    bump_count_for,
    estimate_bits,
    learning_curve,
    margin_check,
    margin_exponent_estimate,
    optimal_rule,
    payoff_for,
    regret,
    sample,
    samples_view,
)
from stopsearch.errors import ConstructionError, ParameterError
from stopsearch.stopping import stopped_payoffs


def spec_with(**kw):
    base = dict(bumps=4, gamma=1.0, alpha=1.0, height=0.5, amp=0.25)
    base.update(kw)
    return build_instance(**base)


def test_bump_shape():
    assert bump(np.array(0.0)) == 1.0
    assert bump(np.array(1.0)) == 0.0
    assert bump(np.array(-1.0)) == 0.0
    assert bump(np.array(5.0)) == 0.0
    z = np.linspace(-0.99, 0.99, 101)
    assert_allclose(bump(z), bump(-z))
    assert np.all(bump(z) > 0) and np.all(bump(z) <= 1.0)


def test_construction_bounds():
    with pytest.raises(ConstructionError):
        spec_with(bumps=2, amp=0.6)  # shift 0.3 reaches min(G1)
    with pytest.raises(ConstructionError):
        spec_with(height=1.0)
    with pytest.raises(ConstructionError):
        LowerBoundSpec(bumps=2, gamma=1.0, alpha=1.0, height=0.5, amp=0.1, omega=(1,))
    with pytest.raises(ConstructionError):
        LowerBoundSpec(bumps=2, gamma=1.0, alpha=1.0, height=0.5, amp=0.1, omega=(1, 2))


def test_geometry_scales():
    spec = spec_with()
    assert spec.shift == 0.25 / 4.0
    assert spec.strip_top == 0.5 / 4.0
    assert spec.density_sup == 1.0


def test_boundary_hits_centers_and_edges():
    # bump j peaks at (2j-1)/m with support ((2j-2)/m, 2j/m); the curve is
    # defined on all of R, so the tail bumps sit beyond the unit interval
    spec = spec_with(omega=(1, 0, 1, 1))
    m = spec.bumps
    centers = (2 * np.arange(1, m + 1) - 1) / m
    values = spec.boundary(centers)
    assert_allclose(values, np.array([1, 0, 1, 1]) * spec.strip_top, atol=1e-15)
    edges = 2 * np.arange(m + 1) / m
    assert_allclose(spec.boundary(edges), 0.0, atol=1e-15)
    assert spec.boundary(np.array(-0.1)) == 0.0
    assert spec.boundary(np.array(2.1)) == 0.0


def test_cells_past_the_unit_interval_carry_no_mass():
    spec = spec_with(omega=(1, 1, 1, 1))
    masses = spec.cell_masses()
    assert np.all(masses[:2] > 0)
    assert_allclose(masses[2:], 0.0, atol=0.0)


def test_success_prob_cases():
    spec = spec_with(omega=(1, 1, 1, 1))
    center = 1.0 / 8.0
    g1 = spec.g1(center)
    # under the boundary, on the strip above it, off the strip entirely
    assert spec.success_prob(center, spec.strip_top * 0.5) == pytest.approx(g1 - spec.shift)
    assert spec.success_prob(np.array([3.0 / 8.0]), np.array([spec.strip_top * 0.9]))[0] == pytest.approx(
        spec.g1(3.0 / 8.0) + spec.shift
    )
    assert spec.success_prob(center, 0.9) == pytest.approx(g1)
    grid = np.linspace(0.001, 0.999, 31)
    probs = spec.success_prob(*np.meshgrid(grid, grid))
    assert np.all(probs > 0) and np.all(probs < 1)


def test_cell_masses_match_numeric_integration():
    spec = spec_with(omega=(1, 1, 1, 1))
    z = np.linspace(0.0, 1.0, 400_001)
    numeric = np.trapezoid(spec.boundary(z), z)
    assert numeric == pytest.approx(spec.cell_masses().sum(), abs=1e-10)


def test_mean_success_matches_monte_carlo():
    spec = spec_with(omega=(1, 0, 1, 0))
    paths = sample(spec, 200_000, seed=13)
    hit = paths.values[:, 1, 2].mean()
    stderr = np.sqrt(hit * (1 - hit) / paths.count)
    assert abs(hit - spec.mean_success()) < 5 * stderr


def test_sample_layout_and_reproducibility():
    spec = spec_with()
    paths = sample(spec, 9000, seed=3, stream_id=2)
    assert paths.values.shape == (9000, 2, 3)
    assert_array_equal(paths.values[:, 0, :2], paths.values[:, 1, :2])
    assert set(np.unique(paths.values[:, 1, 2])) <= {0.0, 1.0}
    assert np.all(paths.values[:, 0, 2] == 0.0)
    again = sample(spec, 9000, seed=3, stream_id=2)
    assert_array_equal(paths.values, again.values)
    prefix = sample(spec, 8192, seed=3, stream_id=2)
    assert_array_equal(paths.values[:8192], prefix.values)
    view = samples_view(sample(spec, 5, seed=3))
    assert len(view) == 5 and view[0].g2 in (0, 1)


def test_margin_rows_step_exactly_at_the_shift():
    for alpha in (0.5, 1.0, 2.0):
        spec = spec_with(alpha=alpha)
        rows = margin_check(spec, [spec.shift / 2, spec.shift, 2 * spec.shift])
        assert [ok for _, _, _, ok in rows] == [True, True, True]
        assert [p for _, p, _, _ in rows] == [0.0, spec.strip_top, spec.strip_top]
        # the bound is tight at the step
        assert rows[1][2] == pytest.approx(spec.strip_top, rel=1e-12)
    with pytest.raises(ParameterError):
        margin_check(spec_with(), [-0.1])


def test_margin_exponent_recovery():
    for alpha in (0.5, 1.0, 2.0):
        family = [spec_with(alpha=alpha, bumps=m) for m in (2, 4, 8, 16)]
        assert margin_exponent_estimate(family) == pytest.approx(alpha, abs=1e-10)
    with pytest.raises(ParameterError):
        margin_exponent_estimate([spec_with(), spec_with()])


def test_payoff_for_stops_like_the_rule():
    spec = spec_with(omega=(1, 0, 1, 0))
    paths = sample(spec, 4000, seed=21)
    payoff = payoff_for(spec)
    rule = optimal_rule(spec)
    pays = stopped_payoffs(rule, None, paths, payoff)
    under = paths.values[:, 0, 1] <= spec.boundary(paths.values[:, 0, 0])
    expected = np.where(under, spec.g1(paths.values[:, 0, 0]), paths.values[:, 1, 2])
    assert_array_equal(pays, expected)


def test_regret_of_the_optimal_rule_is_zero():
    spec = spec_with(omega=(1, 0, 1, 0))
    assert regret(spec, optimal_rule(spec)) == pytest.approx(0.0, abs=1e-12)
    assert regret(spec, np.array(spec.omega)) == 0.0


def test_regret_of_always_stopping_is_the_planted_area():
    spec = spec_with(omega=(0, 0, 0, 0))
    # nothing is planted, so the all-ones guess pays for the whole curve area
    expected = spec.shift * spec.cell_masses().sum()
    assert regret(spec, np.ones(4)) == pytest.approx(expected, rel=1e-12)
    top = spec.strip_top
    assert regret(spec, lambda z: np.full_like(np.asarray(z, dtype=np.float64), top)) == pytest.approx(
        spec.shift * top, rel=1e-9
    )


def test_regret_bit_route_equals_quadrature_route():
    spec = spec_with(omega=(1, 0, 0, 1))
    bits = np.array([1, 1, 0, 0])
    curve = lambda z: _bits_curve(spec, bits, z)
    assert regret(spec, bits) == pytest.approx(regret(spec, curve), abs=1e-9)
    with pytest.raises(ParameterError):
        regret(spec, np.ones(3))


def _bits_curve(spec, bits, z):
    from stopsearch.adversarial import _boundary_curve

    return _boundary_curve(np.asarray(z, dtype=np.float64), bits.astype(np.float64), spec)


def test_estimator_recovers_bits_from_large_samples():
    # only cells intersecting the unit interval are learnable; massless
    # cells fall back to the stopping side and contribute zero regret
    spec = spec_with(omega=(1, 0, 0, 1, 1, 0, 1, 0), bumps=8)
    paths = sample(spec, 300_000, seed=31)
    learnable = spec.cell_masses() > 0
    expected = np.where(learnable, spec.omega, 1)
    assert_array_equal(estimate_bits(spec, paths), expected)


def test_bump_count_rule():
    assert bump_count_for(4096, gamma=1.0, alpha=1.0) == 8  # 4096^(1/4)
    assert bump_count_for(1, gamma=1.0, alpha=1.0) == 1
    counts = [bump_count_for(n, 1.0, 1.0) for n in (2**7, 2**10, 2**14)]
    assert counts == sorted(counts)


def test_learning_curve_is_deterministic_and_decreasing():
    base = spec_with()
    curve = learning_curve(base, (128, 512, 2048), replications=12, seed=5)
    again = learning_curve(base, (128, 512, 2048), replications=12, seed=5)
    assert curve == again
    means = [v for _, v, _ in curve.rows]
    assert means[0] > means[-1] > 0
    assert curve.slope < 0
    with pytest.raises(ParameterError):
        learning_curve(base, (128, 128), replications=2, seed=5)
    with pytest.raises(ParameterError):
        learning_curve(base, (128, 256), replications=0, seed=5)
