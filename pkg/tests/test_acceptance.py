"""Acceptance criteria at their stated tolerances and sample sizes.

Each test records one PASS/FAIL line, printed in the terminal summary.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from kpzh_lab.cli import main
from kpzh_lab.disc import jump_rate_scan
from kpzh_lab.kpzh import DEFAULT_STEP, ew_limit_check
from kpzh_lab.ocy_kernels import ito_mean_check, zsd_ratio_invariance
from kpzh_lab.paths import RngStream, make_grid, read_paths_csv
from kpzh_lab.queue_ops import TransformConfig, scaling_residual
from kpzh_lab.suites import (
    DUFRESNE_CASES,
    FIGURE_BETAS,
    FIGURE_DRIFTS,
    ITO_CASES,
    JUMP_LAMBDAS,
    SuiteConfig,
    bm_family,
    chaos_bound_report,
    closed_form_error,
    detrended_spread,
    dirichlet_reports,
    dufresne_report,
    figure_filename,
    gap_law_report,
    intertwine_study,
    kernel_limit_report,
    lse_max_rates,
    moment_reports,
    ordering_violation,
    zero_temperature_bridge,
)

pytestmark = pytest.mark.slow

REPS = 10**4
ORDER_TOL = 1e-9


def _elapsed(start: float) -> str:
    return f"{time.perf_counter() - start:.1f}s"


def test_intertwining_refinement(acceptance_log):
    t0 = time.perf_counter()
    grid = make_grid(-30.0, 5.0, 2.0**-12)
    fine, ratios = [], []
    for seed in range(20):
        f, c = intertwine_study(grid, seed)
        fine.append(f)
        ratios.append(c / f)
    ok = max(fine) < 5e-3 and min(ratios) >= 1.8
    acceptance_log(
        1, "intertwining", ok, f"max residual {max(fine):.2e} (< 5e-3), min refinement ratio {min(ratios):.2f} (>= 1.8), {_elapsed(t0)}"
    )
    assert ok


def test_closed_form_equivalence(acceptance_log):
    t0 = time.perf_counter()
    grid = make_grid(-20.0, 5.0, DEFAULT_STEP)
    cfg = TransformConfig(1.0)
    worst = {n: max(closed_form_error(bm_family(grid, range(n), RngStream(seed, 101, (n,))), cfg) for seed in range(20)) for n in (2, 3)}
    ok = max(worst.values()) <= 1e-8
    acceptance_log(2, "closed form", ok, f"max relative error n=2 {worst[2]:.1e}, n=3 {worst[3]:.1e} (<= 1e-8), {_elapsed(t0)}")
    assert ok


def test_scaling_commutation(acceptance_log):
    t0 = time.perf_counter()
    grid = make_grid(-20.0, 5.0, DEFAULT_STEP)
    cfg = TransformConfig(1.0)
    worst = {}
    for gamma, alpha in ((2.0, 0.0), (0.5, 1.0)):
        worst[(gamma, alpha)] = max(
            scaling_residual(bm_family(grid, (0.0, 1.0, 2.0), RngStream(seed, 102)), cfg, gamma, alpha) for seed in range(10)
        )
    ok = max(worst.values()) <= 1e-6
    detail = ", ".join(f"(gamma={g:g}, alpha={a:g}) {v:.1e}" for (g, a), v in worst.items())
    acceptance_log(3, "scaling commutation", ok, f"{detail} (<= 1e-6), {_elapsed(t0)}")
    assert ok


def test_polymer_invariance(acceptance_log):
    t0 = time.perf_counter()
    rep = zsd_ratio_invariance((1.0, 2.0), 1.0, (1, 5), REPS, RngStream(0, 103), make_grid(-30.0, 5.0, DEFAULT_STEP))
    acceptance_log(
        4,
        "polymer invariance",
        rep.passed,
        f"min p {rep.p_value:.3g} over {rep.metadata['tests']} KS tests (Bonferroni at 0.01), {_elapsed(t0)}",
    )
    assert rep.passed


def test_increment_law(acceptance_log):
    t0 = time.perf_counter()
    reports = [dufresne_report(lam, beta, REPS, RngStream(0, 104, (i,))) for i, (lam, beta) in enumerate(DUFRESNE_CASES)]
    reports.append(gap_law_report(1.0, 1.0, 1.0, REPS, RngStream(0, 105), make_grid(-32.0, 2.0, DEFAULT_STEP)))
    ok = all(r.p_value > 0.01 for r in reports)
    detail = ", ".join(f"{r.name} p={r.p_value:.3g}" for r in reports)
    acceptance_log(5, "increment law", ok, f"{detail}, {_elapsed(t0)}")
    assert ok


def test_zero_temperature_limit(acceptance_log):
    t0 = time.perf_counter()
    errs = lse_max_rates(make_grid(-30.0, 5.0, DEFAULT_STEP), 0)
    ratio = errs[0] / errs[1]
    bridge = zero_temperature_bridge(SuiteConfig(seed=0, reps=REPS))
    ok = 1.5 <= ratio <= 3.0 and bridge.passed
    acceptance_log(
        6,
        "zero-temperature limit",
        ok,
        f"error ratio beta 100/200 = {ratio:.2f} (in [1.5, 3]), bridge min p {bridge.p_value:.3g}, {_elapsed(t0)}",
    )
    assert ok


def test_high_temperature_limit(acceptance_log):
    t0 = time.perf_counter()
    rep = ew_limit_check(1.0, (0.5, 0.2, 0.1, 0.05), 1.0, REPS, RngStream(0, 106))
    means = ", ".join(f"{r['mean']:.3f}" for r in rep.metadata["per_beta"])
    variances = ", ".join(f"{r['variance']:.3f}" for r in rep.metadata["per_beta"])
    acceptance_log(7, "high-temperature limit", rep.passed, f"means [{means}], variances [{variances}], {_elapsed(t0)}")
    assert rep.passed


def test_discontinuity_signal(acceptance_log):
    t0 = time.perf_counter()
    scan = jump_rate_scan(JUMP_LAMBDAS, 1.0, 1.0, 0.1, 10**5, RngStream(0, 107))
    control = jump_rate_scan(JUMP_LAMBDAS, 1.0, 1.0, 0.1, 0, RngStream(0, 108), process="control")
    ok = scan.passed and control.rates[-1] == 0.0
    rates = ", ".join(f"{r:.3f}" for r in scan.rates)
    acceptance_log(
        8,
        "discontinuity signal",
        ok,
        f"rates [{rates}], smallest-lambda lower bound {scan.rate_lower[-1]:.3f}, control rate {control.rates[-1]:g}, {_elapsed(t0)}",
    )
    assert ok


def test_kernels(acceptance_log):
    t0 = time.perf_counter()
    reports = [kernel_limit_report(), *moment_reports(10**4), *dirichlet_reports(), chaos_bound_report()]
    reports += [ito_mean_check(n, y, g, 10**5, RngStream(0, 109, (i,))) for i, (n, y, g) in enumerate(ITO_CASES)]
    ok = all(r.passed for r in reports)
    detail = ", ".join(f"{r.name} {'ok' if r.passed else 'FAIL'} ({r.statistic:.2g})" for r in reports)
    acceptance_log(9, "kernels", ok, f"{detail}, {_elapsed(t0)}")
    assert ok


def test_figure_regimes(acceptance_log, tmp_path):
    t0 = time.perf_counter()
    spreads = {beta: [] for beta in FIGURE_BETAS}
    worst_order = 0.0
    for seed in range(20):
        out = tmp_path / f"seed{seed}"
        assert main(["figure1", "--seed", str(seed), "--output", str(out)]) == 0
        for beta in FIGURE_BETAS:
            names, table = read_paths_csv(out / figure_filename(beta))
            grid = make_grid(table[0, 0], table[-1, 0], table[1, 0] - table[0, 0])
            columns = [table[:, j] for j in range(1, table.shape[1])]
            finite = np.all(np.isfinite(table), axis=1)
            worst_order = max(worst_order, ordering_violation([c[finite] for c in columns]))
            spreads[beta].append(detrended_spread(grid, columns, FIGURE_DRIFTS))
    medians = [float(np.median(spreads[beta])) for beta in FIGURE_BETAS]
    ok = worst_order <= ORDER_TOL and all(a < b for a, b in zip(medians, medians[1:]))
    detail = ", ".join(f"beta={b:g} {m:.2f}" for b, m in zip(FIGURE_BETAS, medians))
    acceptance_log(10, "figure regimes", ok, f"median spreads {detail}, max ordering violation {worst_order:.1e}, {_elapsed(t0)}")
    assert ok
