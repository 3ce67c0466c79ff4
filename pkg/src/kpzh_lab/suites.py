"""Verification suites and figure data behind the command-line interface.

Each suite returns a list of :class:`~kpzh_lab.stats.TestReport`.  Every
Monte Carlo report records the ``(seed, stream_id)`` of the stream it used,
and suites draw from disjoint child streams, so a single failing check can be
replayed by calling the underlying function with the recorded stream.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .disc import jump_rate_scan, lambda_gamma
from .kpzh import (
    DEFAULT_STEP,
    GammaIncrementModel,
    dufresne_rows,
    ew_limit_check,
    increment_gap_rows,
    kpzh_values,
    sample_kpzh,
    sh_values,
)
from .ocy_kernels import (
    KernelParams,
    PRODUCT_BOUND_CONSTANT,
    calibrate_chaos_constant,
    chaos_l2_bruteforce,
    dirichlet_closed_form,
    dirichlet_integral,
    heat_kernel,
    ito_mean_check,
    moment_integral_check,
    pn_kernel,
    product_bound_ratio,
    weak_compositions,
    zsd_ratio_invariance,
)
from .paths import DriftVector, Grid, RngStream, SampledPath, brownian_rows, make_grid, write_paths_csv
from .queue_ops import (
    TransformConfig,
    d_iter,
    d_iter_closed_form,
    d_map,
    increment_order_violation,
    intertwine_residual,
    scaling_residual,
    sh_d_iter_rows,
    sh_d_map,
)
from .stats import TestReport, bonferroni_suite, ks_one_sample, ks_two_sample

FIGURE_BETAS = (0.1, 1.0, 20.0)
FIGURE_DRIFTS = (-5.0, -2.5, 0.0, 2.5, 5.0)
FIGURE_GRID = (-128.0, 8.0, 2.0**-8)
INTERTWINE_TOL = 5e-3
REFINEMENT_RATIO = 1.8
CLOSED_FORM_RTOL = 1e-8
SCALING_TOL = 1e-6
LSE_RATIO_BAND = (1.5, 3.0)
KERNEL_POINTS = ((1.0, 0.0, 0.0, 0.0), (1.0, 0.5, 0.0, 0.0), (2.0, -1.0, 0.5, 0.0), (0.5, 0.3, 0.0, 0.2), (1.5, 1.0, 0.25, -0.5))
PN_LEVELS = (10**2, 10**3, 10**4)
MOMENT_RTOL = 0.01
DIRICHLET_RTOL = 1e-8


@dataclass(frozen=True)
class SuiteConfig:
    """Shared knobs; ``None`` fields fall back to each suite's own default."""

    seed: int = 0
    reps: int = 10_000
    beta: float | None = None
    drifts: tuple | None = None
    grid: Grid | None = None
    y: float = 1.0
    epsilon: float = 0.1
    alpha: float = 0.01
    threads: int | None = None
    strict: bool = False


def deterministic_report(name: str, error: float, tolerance: float, passed: bool | None = None, **meta) -> TestReport:
    """Report for a deterministic comparison: pass iff ``error <= tolerance`` unless overridden."""
    ok = bool(error <= tolerance) if passed is None else bool(passed)
    meta.setdefault("criterion", "error <= tolerance")
    return TestReport(name, float(error), float("nan"), 0, 0, float(tolerance), ok, meta)


def _stream(cfg: SuiteConfig, suite_id: int, *key: int) -> RngStream:
    return RngStream(cfg.seed, suite_id, tuple(key))


# deterministic identities


def bm_family(grid: Grid, drifts: Sequence[float], rng: RngStream) -> list[SampledPath]:
    gen = rng.generator()
    return [SampledPath(grid, brownian_rows(grid, lam, 1.0, gen, 1)[0], lam) for lam in drifts]


def restrict(path: SampledPath, coarse: Grid) -> SampledPath:
    """Values of a path at the nodes of a coarser, nested grid."""
    ratio = int(round(coarse.step / path.grid.step))
    offset = path.grid.index_of(coarse.x_min)
    values = path.values[offset : offset + ratio * (coarse.n_nodes - 1) + 1 : ratio]
    return SampledPath(coarse, values, path.drift_label)


def closed_form_error(paths: Sequence[SampledPath], cfg: TransformConfig) -> float:
    """Sup of ``|exp(beta (recursive - nested)) - 1|`` over nodes right of the cut."""
    rec = d_iter(paths, cfg).values
    nested = d_iter_closed_form(paths, cfg).values
    diff = cfg.beta * (rec - nested)
    finite = np.isfinite(diff)
    return float(np.max(np.abs(np.expm1(diff[finite]))))


def intertwine_study(grid: Grid, seed: int, beta: float = 1.0, drifts=(0.0, 1.0, 2.0), stream_id: int = 1) -> tuple[float, float]:
    """Residual on ``grid`` and on the grid with doubled step, same noise."""
    fine_paths = bm_family(grid, drifts, RngStream(seed, stream_id))
    coarse = make_grid(grid.x_min, grid.x_max, 2.0 * grid.step)
    coarse_paths = [restrict(p, coarse) for p in fine_paths]
    cfg = TransformConfig(beta)
    fine_res = intertwine_residual(*fine_paths, cfg)
    coarse_res = intertwine_residual(*coarse_paths, cfg)
    return fine_res, coarse_res


def sh_bruteforce_three(ys: Sequence[np.ndarray], grid: Grid) -> np.ndarray:
    """``Y1(y) + max_{x2 <= x1 <= y} [(Y2 - Y1)(x1) + (Y3 - Y2)(x2)]``, pinned, by enumeration."""
    y1, y2, y3 = (np.asarray(v) for v in ys)
    n = grid.n_nodes
    best = np.full(n, -np.inf)
    for j in range(n):
        for i in range(j + 1):
            val = (y2[j] - y1[j]) + (y3[i] - y2[i])
            for target in range(j, n):
                if val > best[target]:
                    best[target] = val
    o = grid.origin_index
    return y1 + (best - best[o])


def identities_suite(cfg: SuiteConfig, seeds: int = 5) -> list[TestReport]:
    grid = cfg.grid or make_grid(-20.0, 5.0, DEFAULT_STEP)
    beta = cfg.beta or 1.0
    tcfg = TransformConfig(beta)
    reports = []
    for n in (2, 3):
        errs = [closed_form_error(bm_family(grid, range(n), _stream(cfg, 1, n, s)), tcfg) for s in range(seeds)]
        reports.append(
            deterministic_report(
                f"closed_form[n={n}]", max(errs), CLOSED_FORM_RTOL, seeds=seeds, beta=beta, seed=cfg.seed, stream_id=1
            )
        )
    fine, coarse = [], []
    for s in range(seeds):
        f, c = intertwine_study(grid, cfg.seed * 1000 + s, beta, stream_id=2)
        fine.append(f)
        coarse.append(c)
    ratios = [c / f if f > 0 else math.inf for f, c in zip(fine, coarse)]
    reports.append(
        deterministic_report(
            "intertwining",
            max(fine),
            INTERTWINE_TOL,
            passed=max(fine) < INTERTWINE_TOL and min(ratios) >= REFINEMENT_RATIO,
            criterion=f"residual < {INTERTWINE_TOL:g} and coarse/fine ratio >= {REFINEMENT_RATIO:g}",
            residuals=fine,
            coarse_residuals=coarse,
            ratios=ratios,
            step=grid.step,
        )
    )
    for gamma, shift in ((2.0, 0.0), (0.5, 1.0)):
        errs = [scaling_residual(bm_family(grid, (0.0, 1.0, 2.0), _stream(cfg, 3, s)), tcfg, gamma, shift) for s in range(seeds)]
        reports.append(deterministic_report(f"scaling[gamma={gamma:g}, alpha={shift:g}]", max(errs), SCALING_TOL, seeds=seeds))
    reports.extend(zero_temperature_reports(cfg, grid))
    return reports


def zero_temperature_reports(cfg: SuiteConfig, grid: Grid) -> list[TestReport]:
    fam = bm_family(grid, (0.0, 1.0), _stream(cfg, 4, 0))
    dp = sh_d_iter_rows([p.values for p in fam], grid)
    direct = sh_d_map(*fam).values
    out = [deterministic_report("sh_dp[n=2]", float(np.max(np.abs(dp - direct))), 0.0)]
    small = make_grid(-31.0 / 16.0, 2.0, 1.0 / 16.0)
    fam3 = bm_family(small, (0.0, 1.0, 2.0), _stream(cfg, 4, 1))
    rows = [p.values for p in fam3]
    dp3 = sh_d_iter_rows(rows, small)
    brute = sh_bruteforce_three(rows, small)
    out.append(deterministic_report("sh_dp_bruteforce[n=3]", float(np.max(np.abs(dp3 - brute))), 0.0, nodes=small.n_nodes))
    return out


def lse_max_rates(grid: Grid, seed: int, betas=(100.0, 200.0), stream_id: int = 5) -> list[float]:
    """Sup-distance between positive- and zero-temperature departures, per ``beta``."""
    B, Y = bm_family(grid, (0.0, 1.0), RngStream(seed, stream_id))
    sh = sh_d_map(B, Y).values
    start = grid.index_of(0.5 * grid.x_min)
    out = []
    for beta in betas:
        d = d_map(B, Y, TransformConfig(beta)).values
        out.append(float(np.nanmax(np.abs(d - sh)[start:])))
    return out


# Monte Carlo suites


def invariance_suite(cfg: SuiteConfig) -> list[TestReport]:
    drifts = cfg.drifts or (1.0, 2.0)
    grid = cfg.grid or make_grid(-30.0, 5.0, DEFAULT_STEP)
    return [zsd_ratio_invariance(drifts, cfg.beta or 1.0, (1, 5), cfg.reps, _stream(cfg, 10), grid, alpha=cfg.alpha, threads=cfg.threads)]


DUFRESNE_CASES = ((1.0, 1.0), (2.0, 1.0), (1.0, 2.0))


def dufresne_report(lam: float, beta: float, reps: int, rng: RngStream, step: float = DEFAULT_STEP, threads=None, strict=False) -> TestReport:
    left_cut = -math.ceil(30.0 / (lam * beta))
    draws = dufresne_rows(lam, beta, step, left_cut, reps, rng, strict=strict, threads=threads)
    ref = GammaIncrementModel(lam, beta).reference()
    return ks_one_sample(
        draws,
        ref,
        name=f"dufresne[lambda={lam:g}, beta={beta:g}]",
        metadata={"reference": ref.describe(), "left_cut": left_cut, "step": step, "seed": rng.seed, "stream_id": rng.stream_id},
    )


def gap_law_report(lam: float, beta: float, y: float, reps: int, rng: RngStream, grid: Grid, threads=None) -> TestReport:
    coupled = kpzh_values((0.0, lam), beta, grid, [y], reps, rng.child(0), threads=threads)
    gaps = coupled[:, 1, 0] - coupled[:, 0, 0]
    direct = increment_gap_rows(lam, beta, y, reps, rng.child(1), grid.step, threads=threads)
    return ks_two_sample(
        gaps,
        direct,
        name=f"increment_law[lambda={lam:g}, beta={beta:g}, y={y:g}]",
        metadata={"grid": [grid.x_min, grid.x_max, grid.step], "seed": rng.seed, "stream_id": rng.stream_id},
    )


def gamma_suite(cfg: SuiteConfig) -> list[TestReport]:
    step = cfg.grid.step if cfg.grid else DEFAULT_STEP
    reports = [
        dufresne_report(lam, beta, cfg.reps, _stream(cfg, 20, i), step, cfg.threads, cfg.strict)
        for i, (lam, beta) in enumerate(DUFRESNE_CASES)
    ]
    beta = cfg.beta or 1.0
    grid = cfg.grid or make_grid(-32.0, 2.0, DEFAULT_STEP)
    reports.append(gap_law_report(1.0, beta, cfg.y, cfg.reps, _stream(cfg, 21), grid, cfg.threads))
    return reports


def zero_temperature_bridge(cfg: SuiteConfig, beta: float = 50.0) -> TestReport:
    """Two-sample KS at ``y`` between ``F_beta(2 .)`` and zero-temperature samples, per member."""
    drifts = cfg.drifts or (0.0, 1.0)
    grid = cfg.grid or make_grid(-20.0, 5.0, DEFAULT_STEP)
    rng = _stream(cfg, 31)
    hot = kpzh_values(drifts, beta, grid, [cfg.y], cfg.reps, rng.child(0), dilation=2.0, threads=cfg.threads)
    cold = sh_values(drifts, grid, [cfg.y], cfg.reps, rng.child(1), threads=cfg.threads)
    parts = [ks_two_sample(hot[:, i, 0], cold[:, i, 0], name=f"beta_infinity[{lam:g}]") for i, lam in enumerate(drifts)]
    return bonferroni_suite(
        "beta_infinity_bridge",
        parts,
        cfg.alpha,
        {"beta": beta, "drifts": list(drifts), "y": cfg.y, "seed": rng.seed, "stream_id": rng.stream_id},
    )


def lse_report(grid: Grid, seed: int) -> TestReport:
    errs = lse_max_rates(grid, seed)
    ratio = errs[0] / errs[1]
    lo, hi = LSE_RATIO_BAND
    return deterministic_report(
        "lse_to_max_rate",
        ratio,
        lo,
        passed=lo <= ratio <= hi,
        criterion=f"error ratio between beta=100 and beta=200 in [{lo:g}, {hi:g}]",
        errors=errs,
    )


EW_BETAS = (0.5, 0.2, 0.1, 0.05)


def limits_suite(cfg: SuiteConfig) -> list[TestReport]:
    grid = cfg.grid or make_grid(-30.0, 5.0, DEFAULT_STEP)
    reports = [lse_report(grid, cfg.seed)]
    reports.append(zero_temperature_bridge(cfg))
    step = cfg.grid.step if cfg.grid else DEFAULT_STEP
    reports.append(ew_limit_check(1.0, EW_BETAS, cfg.y, cfg.reps, _stream(cfg, 32), step, cfg.alpha, cfg.threads))
    return reports


# kernels


def kernel_limit_report() -> TestReport:
    rows, ok = [], True
    for t, y, s, x in KERNEL_POINTS:
        target = heat_kernel(t - s, y - x)
        errs = [abs(pn_kernel(KernelParams(N, t, s, x, y)) - target) for N in PN_LEVELS]
        ok &= all(b < a for a, b in zip(errs, errs[1:]))
        rows.append({"t": t, "y": y, "s": s, "x": x, "errors": errs})
    return deterministic_report(
        "pn_kernel_limit", max(r["errors"][-1] for r in rows), math.inf, passed=ok, criterion="|p_N - rho| strictly decreasing in N", points=rows
    )


def moment_reports(N: int = 10**4) -> list[TestReport]:
    out = []
    for M in (1, 2):
        num, lim = moment_integral_check(N, 1.0, 0.0, 1.0, M)
        out.append(deterministic_report(f"moment_integral[M={M}]", abs(num - lim) / lim, MOMENT_RTOL, numeric=num, limit=lim, N=N))
    return out


def dirichlet_reports() -> list[TestReport]:
    out = []
    for k, n in ((1, 1), (2, 2)):
        worst = 0.0
        for comp in weak_compositions(n, k + 1):
            quad = dirichlet_integral(comp, 1.0)
            worst = max(worst, abs(quad / dirichlet_closed_form(comp, 1.0) - 1.0))
        out.append(deterministic_report(f"dirichlet[k={k}, n={n}]", worst, DIRICHLET_RTOL))
    return out


def chaos_bound_report(y: float = 1.0) -> TestReport:
    constant = calibrate_chaos_constant(y)
    worst, cases = 0.0, []
    for k, n in itertools.product((1, 2, 3), range(1, 9)):
        exact, bound = chaos_l2_bruteforce(n, k, y, constant)
        cases.append({"k": k, "n": n, "exact": exact, "bound": bound})
        worst = max(worst, exact / bound)
    return deterministic_report(
        "chaos_l2_bound",
        worst,
        1.0,
        criterion="max exact/bound <= 1 over k <= 3, 1 <= n <= 8",
        constant=constant,
        cases=cases,
    )


def product_bound_report(samples: int, rng: RngStream) -> TestReport:
    """Random tuples: ``k`` in 1..3, ``n`` in 0..8, uniform gaps on ``[0, y]``, ``y`` in ``[0.05, 10]``."""
    gen = rng.generator()
    shapes = list(itertools.product((1, 2, 3), range(9)))
    per_shape = -(-samples // len(shapes))
    worst = 0.0
    for k, n in shapes:
        weights = gen.dirichlet(np.ones(k + 1), size=per_shape)
        counts = gen.multinomial(n, weights)
        y = gen.uniform(0.05, 10.0, size=(per_shape, 1))
        gaps = gen.dirichlet(np.ones(k + 1), size=per_shape) * y
        ratio = product_bound_ratio(counts, gaps) / PRODUCT_BOUND_CONSTANT**k
        worst = max(worst, float(np.max(ratio)))
    return deterministic_report(
        "product_bound",
        worst,
        1.0,
        criterion="max prod q^2 / (C^k g) <= 1",
        constant=PRODUCT_BOUND_CONSTANT,
        samples=per_shape * len(shapes),
        seed=rng.seed,
        stream_id=rng.stream_id,
    )


ITO_CASES = ((1, 1.0, 0.5), (2, 2.0, 0.5))


def kernels_suite(cfg: SuiteConfig) -> list[TestReport]:
    reports = [kernel_limit_report()]
    reports.extend(moment_reports())
    reports.extend(dirichlet_reports())
    reports.append(chaos_bound_report())
    reports.append(product_bound_report(10**5, _stream(cfg, 40)))
    for i, (n, y, gamma) in enumerate(ITO_CASES):
        reports.append(ito_mean_check(n, y, gamma, max(cfg.reps, 10**4), _stream(cfg, 41, i), threads=cfg.threads))
    return reports


JUMP_LAMBDAS = (0.5, 0.2, 0.1, 0.05, 0.02)


def jump_suite(cfg: SuiteConfig) -> list[TestReport]:
    beta = cfg.beta or 1.0
    step = cfg.grid.step if cfg.grid else DEFAULT_STEP
    scan = jump_rate_scan(JUMP_LAMBDAS, beta, cfg.y, cfg.epsilon, max(cfg.reps, 10**4), _stream(cfg, 50), step=step, threads=cfg.threads)
    control = jump_rate_scan(JUMP_LAMBDAS, beta, cfg.y, cfg.epsilon, 0, _stream(cfg, 51), process="control")
    control_report = deterministic_report(
        "continuous_control",
        control.rates[-1],
        0.0,
        criterion="control rate at the smallest lambda is 0",
        rates=list(control.rates),
    )
    helper = deterministic_report("lambda_gamma[0.01]", abs(lambda_gamma(0.01) - 0.994326), 5e-7, value=lambda_gamma(0.01))
    return [scan.to_report(), control_report, helper]


# figure data


def figure_samples(seed: int, grid: Grid | None = None, betas=FIGURE_BETAS, drifts=FIGURE_DRIFTS):
    """One coupled family per ``beta``; stream ``(seed, 60, (i,))`` for the ``i``-th ``beta``."""
    grid = grid or make_grid(*FIGURE_GRID)
    out = {}
    for i, beta in enumerate(betas):
        cfg = TransformConfig(beta, tail_correction=True)
        out[beta] = sample_kpzh(drifts, beta, grid, RngStream(seed, 60, (i,)), cfg)
    return out


def figure_filename(beta: float) -> str:
    return f"figure1_beta{beta:g}.csv"


def write_figure(directory, seed: int, grid: Grid | None = None) -> list[Path]:
    target = Path(directory)
    target.mkdir(parents=True, exist_ok=True)
    paths = []
    for beta, sample in figure_samples(seed, grid).items():
        path = target / figure_filename(beta)
        write_paths_csv(path, sample.grid, [p.values for p in sample.paths])
        paths.append(path)
    return paths


def detrended_spread(grid: Grid, columns: Sequence[np.ndarray], drifts: Sequence[float], half_width: float = 1.0) -> float:
    """Largest pairwise sup-distance of ``F_i(x) - lambda_i x`` over ``|x| <= half_width``."""
    x = grid.nodes
    mask = np.abs(x) <= half_width
    flat = [np.asarray(c)[mask] - lam * x[mask] for c, lam in zip(columns, drifts)]
    return max(float(np.max(np.abs(a - b))) for a, b in itertools.combinations(flat, 2))


def ordering_violation(columns: Sequence[np.ndarray]) -> float:
    """Largest drop of ``F_{i+1} - F_i`` between any two nodes, over consecutive members."""
    worst = 0.0
    for lower, upper in zip(columns, columns[1:]):
        worst = max(worst, float(np.max(increment_order_violation(lower, upper))))
    return worst
