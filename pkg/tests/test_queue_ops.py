from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kpzh_lab.errors import DriftGapViolated, EmptyRange
from kpzh_lab.paths import DriftVector, RngStream, SampledPath, brownian_rows, make_grid, sample_bm, tail_slope
from kpzh_lab.queue_ops import (
    CouplingSample,
    TransformConfig,
    d_iter,
    d_iter_closed_form,
    d_map,
    d_rows,
    increment_order_violation,
    intertwine_residual,
    markov_step,
    multiline_step,
    prefix_log_int_exp,
    q_map,
    q_rows,
    r_map,
    r_rows,
    scaling_residual,
    sh_d_iter,
    sh_d_iter_rows,
    sh_d_map,
)
from kpzh_lab.stats import Normal, ks_one_sample
from kpzh_lab.suites import bm_family, closed_form_error, lse_max_rates, restrict, sh_bruteforce_three

# high-precision values of the closed-form integrals for B = 0, Y(x) = x, cut at -20
D_ONE = 1.0000000013028976
R_ONE = -1.3028975815e-9
Q_ZERO = -2.0611536245627e-9


def trapezoid_factor(beta, step):
    """Exact ratio of the trapezoid rule to the integral for an exponential."""
    u = 0.5 * beta * step
    return u / math.tanh(u)


def linear_pair(grid):
    return SampledPath.from_function(grid, lambda x: 0 * x), SampledPath.from_function(grid, lambda x: x)


# prefix_log_int_exp


def test_prefix_constant_integrand():
    grid = make_grid(-2, 1, 2**-4)
    assert math.isclose(prefix_log_int_exp(np.zeros(grid.n_nodes), 1.0, grid, -2.0, 0.0), math.log(2), rel_tol=1e-14)


def test_prefix_linear_exponent_near_full_mass():
    step = 2.0**-16
    grid = make_grid(-20, 0.5, step)
    val = prefix_log_int_exp(grid.nodes.copy(), 1.0, grid, -20.0, 0.0)
    assert abs(val) < 3e-9
    oracle = math.log(-math.expm1(-20.0)) + math.log(trapezoid_factor(1.0, step))
    # summation roundoff over ~1.3e6 cells is ~1e-12
    assert math.isclose(val, oracle, abs_tol=1e-11)


def test_prefix_large_beta_discrete_closed_form():
    step = 2.0**-10
    grid = make_grid(-20, 1, step)
    beta = 50.0
    out = prefix_log_int_exp(grid.nodes.copy(), beta, grid)
    y = grid.nodes[grid.origin_index + 1 :]
    exact = (beta * y + np.log(-np.expm1(-beta * (y + 20))) - math.log(beta) + math.log(trapezoid_factor(beta, step))) / beta
    np.testing.assert_allclose(out[grid.origin_index + 1 :], exact, rtol=1e-10)


def test_prefix_no_overflow():
    grid = make_grid(-1, 1, 2**-8)
    g = 1e4 * np.sin(7 * grid.nodes)
    out = prefix_log_int_exp(g, 100.0, grid)
    assert np.all(np.isfinite(out[1:]))
    assert np.isnan(out[0])


def test_prefix_empty_range():
    grid = make_grid(-2, 1, 0.5)
    with pytest.raises(EmptyRange):
        prefix_log_int_exp(np.zeros(grid.n_nodes), 1.0, grid, -1.0, -1.0)


# q, d, r on closed-form inputs


def test_q_equal_paths():
    grid = make_grid(-2, 1, 2**-5)
    b = sample_bm(grid, 0.0, 1.0, RngStream(1))
    assert math.isclose(q_map(b, b, TransformConfig(1.0))[grid.origin_index], math.log(2), rel_tol=1e-13)


def test_q_linear_closed_form():
    step = 2.0**-16
    grid = make_grid(-20, 1, step)
    B, Y = linear_pair(grid)
    q0 = q_map(B, Y, TransformConfig(1.0))[grid.origin_index]
    assert math.isclose(q0, Q_ZERO + math.log(trapezoid_factor(1.0, step)), abs_tol=1e-11)
    assert abs(q0 - Q_ZERO) < 1e-10


def test_d_and_r_linear_closed_form():
    grid = make_grid(-20, 1, 2**-10)
    B, Y = linear_pair(grid)
    cfg = TransformConfig(1.0)
    d, r = d_map(B, Y, cfg), r_map(B, Y, cfg)
    assert d(0) == 0.0 and r(0) == 0.0
    # the trapezoid factor cancels in increments of Q
    assert math.isclose(d(1.0), D_ONE, abs_tol=1e-13)
    assert math.isclose(r(1.0), R_ONE, abs_tol=1e-13)
    assert abs(r(1.0)) < 1e-8


def test_q_matches_direct_quadrature():
    grid = make_grid(-6, 2, 2**-8)
    B = sample_bm(grid, 0.0, 1.0, RngStream(2))
    Y = sample_bm(grid, 1.0, 1.0, RngStream(3))
    q = q_map(B, Y, TransformConfig(1.0))
    b, y = B.values, Y.values
    for j in (grid.origin_index, grid.n_nodes - 1, 100):
        integrand = np.exp((b[j] - b[: j + 1]) - (y[j] - y[: j + 1]))
        direct = math.log(np.trapezoid(integrand, dx=grid.step))
        assert math.isclose(q[j], direct, rel_tol=1e-10, abs_tol=1e-12)


def test_q_finite_over_replicates():
    grid = make_grid(-20, 5, 2**-8)
    gen = RngStream(4).generator()
    b = brownian_rows(grid, 0.0, 1.0, gen, 1000)
    y = brownian_rows(grid, 1.0, 1.0, gen, 1000)
    q = q_rows(b, y, grid, 1.0, 0, 1.0)
    assert np.all(np.isfinite(q))


def test_strict_mode_rejects_reversed_drifts():
    grid = make_grid(-40, 5, 2**-6)
    B = sample_bm(grid, 2.0, 1.0, RngStream(5))
    Y = sample_bm(grid, 0.0, 1.0, RngStream(6))
    with pytest.raises(DriftGapViolated):
        d_map(B, Y, TransformConfig(1.0, strict=True))
    with pytest.warns(RuntimeWarning):
        d_map(B, Y, TransformConfig(1.0))


def test_left_cut_must_be_negative():
    grid = make_grid(-2, 1, 0.25)
    B, Y = linear_pair(grid)
    with pytest.raises(EmptyRange):
        d_map(B, Y, TransformConfig(1.0, left_cut=0.0))


# laws


def _bm_pair_rows(reps, seed, grid):
    gen = RngStream(seed).generator()
    return brownian_rows(grid, 0.0, 1.0, gen, reps), brownian_rows(grid, 1.0, 1.0, gen, reps)


def test_output_theorem_marginals():
    grid = make_grid(-20, 2, 2**-8)
    b, y = _bm_pair_rows(10_000, 7, grid)
    j = grid.index_of(1.0)
    d = d_rows(b, y, grid, 1.0, 0, 1.0)[:, j]
    r = r_rows(b, y, grid, 1.0, 0, 1.0)[:, j]
    assert ks_one_sample(d, Normal(1.0, 1.0)).p_value > 0.01 / 2
    assert ks_one_sample(r, Normal(0.0, 1.0)).p_value > 0.01 / 2


def test_departure_dominates_driver():
    grid = make_grid(-20, 2, 2**-8)
    b, y = _bm_pair_rows(200, 8, grid)
    d = d_rows(b, y, grid, 1.0, 0, 1.0)
    assert np.max(increment_order_violation(b[:, 1:], d[:, 1:])) <= 1e-9


def test_multiline_independent_outputs():
    grid = make_grid(-20, 2, 2**-8)
    gen = RngStream(9).generator()
    reps = 10_000
    drive = brownian_rows(grid, 0.0, 1.0, gen, reps)
    y1 = brownian_rows(grid, 1.0, 1.0, gen, reps)
    y2 = brownian_rows(grid, 2.0, 1.0, gen, reps)
    j = grid.index_of(1.0)
    out1 = d_rows(drive, y1, grid, 1.0, 0, 1.0)[:, j]
    drive2 = r_rows(drive, y1, grid, 1.0, 0, 1.0)
    out2 = d_rows(drive2, y2, grid, 1.0, 0, 2.0)[:, j]
    assert ks_one_sample(out1, Normal(1.0, 1.0)).p_value > 0.01 / 2
    assert ks_one_sample(out2, Normal(2.0, 1.0)).p_value > 0.01 / 2
    corr = np.corrcoef(out1, out2)[0, 1]
    assert abs(corr) < 3 / math.sqrt(reps)


def test_multiline_step_structure():
    grid = make_grid(-20, 2, 2**-6)
    cfg = TransformConfig(1.0)
    fam = bm_family(grid, (0.0, 1.0, 2.0), RngStream(10))
    single = multiline_step(fam[0], fam[1:2], cfg)
    np.testing.assert_array_equal(single[0].values, d_map(fam[0], fam[1], cfg).values)
    outs, driver = multiline_step(fam[0], fam[1:], cfg, return_driver=True)
    b2 = r_map(fam[0], fam[1], cfg)
    np.testing.assert_array_equal(outs[1].values, d_map(b2, fam[2], cfg).values)
    np.testing.assert_array_equal(driver.values, r_map(b2, fam[2], cfg).values)
    refam = bm_family(grid, (0.0, 1.0, 2.0), RngStream(10))
    again = multiline_step(refam[0], refam[1:], cfg)
    for a, b in zip(outs, again):
        np.testing.assert_array_equal(a.values, b.values)


def test_markov_step_preserves_order():
    grid = make_grid(-20, 2, 2**-6)
    cfg = TransformConfig(1.0)
    fam = bm_family(grid, (1.0, 2.0, 3.0), RngStream(11))
    etas = CouplingSample(tuple(d_iter(fam[: i + 1], cfg) for i in range(3)), DriftVector((1.0, 2.0, 3.0)))
    assert etas.ordering_violation() <= 1e-9
    B = sample_bm(grid, 0.0, 1.0, RngStream(12))
    out = markov_step(B, etas, cfg)
    assert out.ordering_violation() <= 1e-9
    one = markov_step(B, CouplingSample((etas[0],), DriftVector((1.0,))), cfg)
    np.testing.assert_array_equal(one[0].values, d_map(B, etas[0], cfg).values)


# iterates


def test_d_iter_small_orders():
    grid = make_grid(-10, 2, 2**-6)
    cfg = TransformConfig(1.0)
    fam = bm_family(grid, (0.0, 1.0), RngStream(13))
    assert d_iter(fam[:1], cfg) is fam[0]
    np.testing.assert_array_equal(d_iter(fam, cfg).values, d_map(fam[0], fam[1], cfg).values)


def test_d_iter_closed_form_piecewise_linear():
    grid = make_grid(-20, 3, 2**-10)
    cfg = TransformConfig(1.0)
    fam = [
        SampledPath.from_function(grid, lambda x: np.where(x < 0, 0.2 * x, -0.5 * x)),
        SampledPath.from_function(grid, lambda x: np.where(x < -3, 1.2 * x + 1.5, 0.7 * x)),
        SampledPath.from_function(grid, lambda x: 2.0 * x + np.abs(x - 1.0) - 1.0),
    ]
    assert closed_form_error(fam, cfg) < 1e-8


@pytest.mark.parametrize("n", [2, 3, 4])
def test_d_iter_closed_form_random(n):
    grid = make_grid(-20, 5, 2**-8)
    fam = bm_family(grid, range(n), RngStream(14, n))
    assert closed_form_error(fam, TransformConfig(1.0)) < 1e-8


def test_d_iter_levels_are_ordered():
    grid = make_grid(-20, 3, 2**-8)
    cfg = TransformConfig(1.0)
    fam = bm_family(grid, (0.0, 0.5, 1.0, 1.5), RngStream(15))
    levels = [d_iter(fam[: i + 1], cfg).values for i in range(4)]
    for lo, hi in zip(levels, levels[1:]):
        assert increment_order_violation(lo[1:], hi[1:])[0] <= 1e-9


def test_slopes_are_preserved():
    grid = make_grid(-200, 2, 2**-6)
    cfg = TransformConfig(1.0)
    B, Y = bm_family(grid, (0.0, 1.0), RngStream(16))
    # estimator sd over a window of 60 is about 0.13
    assert abs(tail_slope(d_map(B, Y, cfg), 60) - tail_slope(Y, 60)) < 0.6
    assert abs(tail_slope(r_map(B, Y, cfg), 60) - tail_slope(B, 60)) < 0.6


@given(st.integers(0, 10_000), st.floats(0.2, 5.0))
def test_departure_monotone_in_input(seed, beta):
    grid = make_grid(-12, 2, 2**-5)
    gen = RngStream(seed, 17).generator()
    b = brownian_rows(grid, 0.0, 1.0, gen, 1)[0]
    y = brownian_rows(grid, 1.0, 1.0, gen, 1)[0]
    bump = np.cumsum(np.abs(gen.standard_normal(grid.n_nodes))) * grid.step
    bump -= bump[grid.origin_index]
    cfg = TransformConfig(beta)
    B = SampledPath(grid, b, 0.0)
    lo = d_map(B, SampledPath(grid, y, 1.0), cfg).values
    hi = d_map(B, SampledPath(grid, y + bump, 1.0), cfg).values
    assert increment_order_violation(lo[1:], hi[1:])[0] <= 1e-9


@given(st.integers(0, 10_000), st.floats(0.2, 5.0))
def test_transforms_are_pinned(seed, beta):
    grid = make_grid(-12, 2, 2**-5)
    B, Y = bm_family(grid, (0.0, 1.0), RngStream(seed, 18))
    cfg = TransformConfig(beta)
    assert d_map(B, Y, cfg)(0) == 0.0
    assert r_map(B, Y, cfg)(0) == 0.0


# intertwining and scaling


def test_intertwining_linear_inputs():
    grid = make_grid(-30, 5, 2**-12)
    fam = [SampledPath.from_function(grid, lambda x, c=c: c * x) for c in (0.0, 1.0, 2.0)]
    assert intertwine_residual(*fam, TransformConfig(1.0)) < 1e-6


def test_intertwining_order_disambiguation():
    grid = make_grid(-30, 5, 2**-10)
    coarse = make_grid(-30, 5, 2**-9)
    fam = bm_family(grid, (0.0, 1.0, 2.0), RngStream(19))
    cfg = TransformConfig(1.0)
    small = [restrict(p, coarse) for p in fam]
    fine_ok, coarse_ok = intertwine_residual(*fam, cfg), intertwine_residual(*small, cfg)
    fine_bad = intertwine_residual(*fam, cfg, order="swapped")
    coarse_bad = intertwine_residual(*small, cfg, order="swapped")
    assert coarse_ok / fine_ok >= 1.8
    assert fine_bad > 100 * fine_ok
    assert coarse_bad / fine_bad < 1.5


def test_scaling_commutation():
    grid = make_grid(-16, 4, 2**-8)
    fam = bm_family(grid, (0.0, 1.0, 2.0), RngStream(20))
    cfg = TransformConfig(1.0)
    for gamma, alpha in ((2.0, 0.0), (0.5, 1.0)):
        assert scaling_residual(fam, cfg, gamma, alpha) < 1e-6


# zero temperature


def test_sh_equal_paths():
    grid = make_grid(-4, 2, 2**-6)
    B = sample_bm(grid, 0.0, 1.0, RngStream(21))
    np.testing.assert_array_equal(sh_d_map(B, B).values, B.values)


def test_sh_kinked_input():
    grid = make_grid(-4, 2, 2**-6)
    B = SampledPath.from_function(grid, lambda x: 0 * x)
    Y = SampledPath.from_function(grid, lambda x: np.minimum(x, 0))
    assert sh_d_map(B, Y)(1.0) == 0.0


def test_sh_iter_dp_matches_recursion():
    grid = make_grid(-10, 2, 2**-6)
    fam = bm_family(grid, (0.0, 1.0), RngStream(22))
    assert sh_d_iter(fam[:1]) is fam[0]
    np.testing.assert_array_equal(sh_d_iter(fam).values, sh_d_map(*fam).values)


def test_sh_iter_dp_matches_bruteforce():
    small = make_grid(-31 / 16, 2, 1 / 16)
    assert small.n_nodes == 64
    rows = [p.values for p in bm_family(small, (0.0, 1.0, 2.0), RngStream(23))]
    np.testing.assert_array_equal(sh_d_iter_rows(rows, small), sh_bruteforce_three(rows, small))


def test_lse_converges_to_max():
    grid = make_grid(-30, 5, 2**-10)
    errs = lse_max_rates(grid, 0, betas=(10.0, 20.0, 50.0, 100.0, 200.0))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert 1.5 <= errs[-2] / errs[-1] <= 3.0
