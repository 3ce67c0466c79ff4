"""Samplers for coupled Brownian families and their increment laws.

The finite-dimensional coupling with drifts ``lambda_1 < ... < lambda_k`` at
inverse temperature ``beta`` is ``(Y1, D(Y1, Y2), ..., D^(k)(Y1, ..., Yk))``
for independent Brownian motions ``Y_i`` with drift ``lambda_i``.  The
zero-temperature family uses the max-plus iterate and a doubled space axis.

Batched drivers (``*_values`` / ``*_rows``) split replicates into fixed-size
blocks; block ``b`` draws from ``rng.child(b)`` so results do not depend on
the number of threads.  Stochastic checks return :class:`~kpzh_lab.stats.TestReport`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel
from ._parallel import concat_blocks, run_blocks
from .errors import TailTooHeavy
from .paths import DriftVector, Grid, RngStream, SampledPath, brownian_rows, make_grid
from .queue_ops import (
    CouplingSample,
    TransformConfig,
    coupling_rows,
    d_rows,
    sh_d_iter_rows,
)
from .stats import (
    Gamma,
    Normal,
    TestReport,
    bonferroni,
    bonferroni_suite,
    ks_one_sample,
    ks_two_sample,
    normal_quantile,
    variance_with_se,
    z_test_mean,
)

TRUNCATION_BUDGET = 30.0
DEFAULT_STEP = 2.0**-10
PATH_BLOCK = 32
SCALAR_BLOCK = 2048


@dataclass(frozen=True)
class GammaIncrementModel:
    """Gamma law with ``shape = lambda_gap / beta`` and ``rate = beta**-2``."""

    lambda_gap: float
    beta: float

    def __post_init__(self):
        if not self.lambda_gap > 0:
            raise ValueError("lambda_gap must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def shape(self) -> float:
        return self.lambda_gap / self.beta

    @property
    def rate(self) -> float:
        return self.beta**-2

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def reference(self) -> Gamma:
        return Gamma(self.shape, self.rate)

    def draw(self, gen: np.random.Generator, size=None):
        return gen.gamma(self.shape, 1.0 / self.rate, size)


@dataclass(frozen=True)
class IncrementSample:
    """One draw of the gap ``F^{lambda_2}(y) - F^{lambda_1}(y)``."""

    y: float
    value: float


def _as_drifts(drifts) -> DriftVector:
    return drifts if isinstance(drifts, DriftVector) else DriftVector(tuple(drifts))


def truncation_margin(drifts: DriftVector, beta: float, left_cut: float) -> float:
    """``beta * min_gap * |left_cut|``; the discarded tail mass is about ``exp(-margin)``."""
    return beta * drifts.min_gap * abs(left_cut)


def _warn_truncation(drifts: DriftVector, beta: float, left_cut: float) -> None:
    margin = truncation_margin(drifts, beta, left_cut)
    if margin < TRUNCATION_BUDGET:
        warnings.warn(
            f"left truncation margin beta*gap*|x_min| = {margin:.3g} < {TRUNCATION_BUDGET:g}; "
            "widen the grid to the left",
            RuntimeWarning,
            stacklevel=3,
        )


def coupling_block(drifts: DriftVector, beta: float, grid: Grid, gen: np.random.Generator, size: int, start: int = 0):
    """Draw ``size`` coupled families; returns ``k`` arrays of shape ``(size, n_nodes)``."""
    ys = [brownian_rows(grid, lam, 1.0, gen, size) for lam in drifts]
    return coupling_rows(ys, grid, beta, start, list(drifts))


def sample_kpzh(drifts, beta: float, grid: Grid, rng: RngStream, cfg: TransformConfig | None = None) -> CouplingSample:
    """One coupled family ``(F^{lambda_1}, ..., F^{lambda_k})`` at inverse temperature ``beta``.

    The default configuration truncates at ``x_min`` and applies the
    straight-line tail correction using the known drift gaps.
    """
    dv = _as_drifts(drifts)
    cfg = cfg or TransformConfig(beta, tail_correction=True)
    start = cfg.start_index(grid)
    _warn_truncation(dv, beta, grid.nodes[start])
    gen = rng.generator()
    ys = [brownian_rows(grid, lam, 1.0, gen, 1)[0] for lam in dv]
    rows = coupling_rows(ys, grid, beta, start, list(dv) if cfg.tail_correction else None)
    return CouplingSample(tuple(SampledPath(grid, r, lam) for r, lam in zip(rows, dv)), dv)


def sample_sh(drifts, grid: Grid, rng: RngStream) -> CouplingSample:
    """Zero-temperature family with the space axis doubled.

    The max-plus iterate is computed on ``grid`` scaled by 2 and read back at
    ``2x``, so member ``i`` has diffusivity ``sqrt(2)`` and drift ``2 lambda_i``.
    """
    dv = _as_drifts(drifts)
    wide = grid.scaled(2.0)
    _warn_truncation(dv, 1.0, wide.x_min)
    gen = rng.generator()
    ys = [brownian_rows(wide, lam, 1.0, gen, 1)[0] for lam in dv]
    rows = [sh_d_iter_rows(ys[: i + 1], wide) for i in range(len(ys))]
    return CouplingSample(tuple(SampledPath(grid, r, 2.0 * lam) for r, lam in zip(rows, dv)), dv)


def _node_indices(grid: Grid, xs: Sequence[float]) -> np.ndarray:
    return np.array([grid.index_of(x) for x in xs], dtype=np.int64)


def kpzh_values(
    drifts,
    beta: float,
    grid: Grid,
    xs: Sequence[float],
    reps: int,
    rng: RngStream,
    dilation: float = 1.0,
    block: int = PATH_BLOCK,
    threads: int | None = None,
) -> np.ndarray:
    """Values at nodes ``xs`` of ``reps`` coupled families, shape ``(reps, k, len(xs))``.

    With ``dilation = c`` the family is built on ``grid`` scaled by ``c`` and
    read at ``c x``, giving samples of ``x -> F(c x)``.
    """
    dv = _as_drifts(drifts)
    src = grid if dilation == 1.0 else grid.scaled(dilation)
    _warn_truncation(dv, beta, src.x_min)
    idx = _node_indices(grid, xs)

    def work(b, size):
        rows = coupling_block(dv, beta, src, rng.child(b).generator(), size)
        return np.stack([r[:, idx] for r in rows], axis=1)

    return concat_blocks(run_blocks(work, reps, block, threads))


def sh_values(
    drifts,
    grid: Grid,
    xs: Sequence[float],
    reps: int,
    rng: RngStream,
    block: int = PATH_BLOCK,
    threads: int | None = None,
) -> np.ndarray:
    """Zero-temperature analogue of :func:`kpzh_values` (doubled space axis)."""
    dv = _as_drifts(drifts)
    wide = grid.scaled(2.0)
    idx = _node_indices(grid, xs)

    def work(b, size):
        gen = rng.child(b).generator()
        ys = [brownian_rows(wide, lam, 1.0, gen, size) for lam in dv]
        return np.stack([sh_d_iter_rows(ys[: i + 1], wide)[:, idx] for i in range(len(ys))], axis=1)

    return concat_blocks(run_blocks(work, reps, block, threads))


def markov_chain_values(
    drifts,
    beta: float,
    grid: Grid,
    xs: Sequence[float],
    steps: Sequence[int],
    reps: int,
    rng: RngStream,
    driver_drift: float = 0.0,
    block: int = PATH_BLOCK,
    threads: int | None = None,
) -> dict[int, np.ndarray]:
    """Evolve sampled families by ``eta_i <- D(B, eta_i)`` with fresh drivers ``B``.

    Returns, for each requested step count, values at ``xs`` with shape
    ``(reps, k, len(xs))``; step 0 is the initial family.
    """
    dv = _as_drifts(drifts)
    if min(dv) <= driver_drift:
        raise ValueError("all drifts must exceed the driver drift")
    _warn_truncation(dv, beta, grid.x_min)
    idx = _node_indices(grid, xs)
    wanted = sorted(set(int(s) for s in steps))
    last = wanted[-1] if wanted else 0

    def work(b, size):
        gen = rng.child(b).generator()
        etas = coupling_block(dv, beta, grid, gen, size)
        snap = {}
        for s in range(last + 1):
            if s > 0:
                drive = brownian_rows(grid, driver_drift, 1.0, gen, size)
                etas = [d_rows(drive, eta, grid, beta, 0, lam - driver_drift) for eta, lam in zip(etas, dv)]
            if s in wanted:
                snap[s] = np.stack([e[:, idx] for e in etas], axis=1)
        return snap

    parts = run_blocks(work, reps, block, threads)
    return {s: np.concatenate([p[s] for p in parts], axis=0) for s in wanted}


def _log_exponential_functional(a: np.ndarray, step: float) -> np.ndarray:
    """``log`` of the trapezoid integral of ``exp(a)`` over each full row."""
    return _accel.log_cumtrapz_exp(a, step)[..., -1]


def _cell_count(y: float, step: float) -> int:
    return max(1, int(math.ceil(y / step - 1e-9)))


def increment_gap_rows(
    lambda_gap: float,
    beta: float,
    y: float,
    reps: int,
    rng: RngStream,
    step: float = DEFAULT_STEP,
    block: int = SCALAR_BLOCK,
    threads: int | None = None,
) -> np.ndarray:
    """``reps`` draws of ``log(1 + X Y(y)) / beta``.

    ``X`` follows :class:`GammaIncrementModel`; ``Y(y)`` is the trapezoid
    integral of ``exp(sqrt(2) beta W(x) + lambda beta x)`` over ``[0, y]`` for
    a fresh standard Brownian motion ``W`` (step adjusted to divide ``y``).
    ``X`` and ``W`` come from disjoint child streams of each block.
    """
    model = GammaIncrementModel(lambda_gap, beta)
    if y < 0:
        raise ValueError("y must be nonnegative")
    if y == 0:
        return np.zeros(reps)
    cells = _cell_count(y, step)
    h = y / cells
    x = np.arange(cells + 1) * h

    def work(b, size):
        big_x = model.draw(rng.child(b, 0).generator(), size)
        gen = rng.child(b, 1).generator()
        w = np.zeros((size, cells + 1))
        np.cumsum(gen.standard_normal((size, cells)) * math.sqrt(h), axis=1, out=w[:, 1:])
        log_y = _log_exponential_functional(math.sqrt(2.0) * beta * w + lambda_gap * beta * x, h)
        with np.errstate(divide="ignore"):
            return np.logaddexp(0.0, np.log(big_x) + log_y) / beta

    return concat_blocks(run_blocks(work, reps, block, threads))


def increment_gap_sample(lambda_gap: float, beta: float, y: float, rng: RngStream, step: float = DEFAULT_STEP) -> IncrementSample:
    """Single draw of the increment-law representation at ``y``."""
    return IncrementSample(y, float(increment_gap_rows(lambda_gap, beta, y, 1, rng, step)[0]))


def _check_dufresne_tail(lam: float, beta: float, left_cut: float, strict: bool) -> None:
    margin = beta * lam * abs(left_cut)
    if margin < TRUNCATION_BUDGET:
        msg = f"beta*lambda*|left_cut| = {margin:.3g} < {TRUNCATION_BUDGET:g}: truncated tail is not negligible"
        if strict:
            raise TailTooHeavy(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)


def dufresne_rows(
    lam: float,
    beta: float,
    grid_step: float,
    left_cut: float,
    reps: int,
    rng: RngStream,
    strict: bool = False,
    block: int = 256,
    threads: int | None = None,
) -> np.ndarray:
    """Reciprocals of the truncated functional ``int_L^0 exp(sqrt(2) beta W(x) + lam beta x) dx``."""
    if not (lam > 0 and beta > 0):
        raise ValueError("lambda and beta must be positive")
    _check_dufresne_tail(lam, beta, left_cut, strict)
    grid = make_grid(left_cut, 0.0, grid_step)
    x = grid.nodes

    def work(b, size):
        w = brownian_rows(grid, 0.0, 1.0, rng.child(b).generator(), size)
        return np.exp(-_log_exponential_functional(math.sqrt(2.0) * beta * w + lam * beta * x, grid.step))

    return concat_blocks(run_blocks(work, reps, block, threads))


def dufresne_inverse_sample(lam: float, beta: float, grid_step: float, left_cut: float, rng: RngStream, strict: bool = False) -> float:
    """One reciprocal exponential functional on ``[left_cut, 0]``."""
    return float(dufresne_rows(lam, beta, grid_step, left_cut, 1, rng, strict)[0])


def ew_limit_check(
    lambda_gap: float,
    beta_list: Sequence[float],
    y: float,
    reps: int,
    rng: RngStream,
    step: float = DEFAULT_STEP,
    alpha: float = 0.01,
    threads: int | None = None,
) -> TestReport:
    """Small-``beta`` check of the increment gap at ``y``.

    Passes iff every gap mean is within its Bonferroni-corrected interval
    around ``lambda_gap * y`` and no variance is significantly larger than
    the variance at the preceding (larger) ``beta``.
    """
    betas = [float(b) for b in beta_list]
    if not lambda_gap > 0:
        raise ValueError("lambda_gap must be positive")
    if not betas or any(b <= 0 for b in betas) or any(b2 >= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError("beta_list must be positive and strictly decreasing")
    target = lambda_gap * y
    m = len(betas)
    z_crit = normal_quantile(1.0 - bonferroni(alpha, 2 * m - 1) / 2.0)
    rows = []
    for i, beta in enumerate(betas):
        gaps = increment_gap_rows(lambda_gap, beta, y, reps, rng.child(i), step, threads=threads)
        z, p = z_test_mean(gaps, target)
        var, var_se = variance_with_se(gaps)
        rows.append({"beta": beta, "mean": float(gaps.mean()), "z": z, "p_value": p, "variance": var, "variance_se": var_se})
    variance_ok = True
    for prev, cur in zip(rows, rows[1:]):
        spread = math.hypot(prev["variance_se"], cur["variance_se"])
        increase = cur["variance"] - prev["variance"]
        cur["variance_increase_z"] = increase / spread if spread > 0 else (0.0 if increase <= 0 else math.inf)
        variance_ok &= cur["variance_increase_z"] <= z_crit
    p_min = min(r["p_value"] for r in rows)
    threshold = bonferroni(alpha, 2 * m - 1)
    passed = p_min > threshold and variance_ok
    return TestReport(
        "ew_limit_check",
        max(abs(r["z"]) for r in rows),
        p_min,
        reps,
        0,
        threshold,
        passed,
        {
            "criterion": "mean z-tests and variance non-increase, Bonferroni over all comparisons",
            "lambda_gap": lambda_gap,
            "y": y,
            "target_mean": target,
            "per_beta": rows,
            "variance_decreasing": variance_ok,
            "seed": rng.seed,
            "stream_id": rng.stream_id,
        },
    )


# distributional invariance checks


def _node_reports(prefix: str, first: np.ndarray, second: np.ndarray, xs, labels) -> list[TestReport]:
    out = []
    for c, label in enumerate(labels):
        for j, x in enumerate(xs):
            out.append(ks_two_sample(first[:, c, j], second[:, c, j], name=f"{prefix}[{label}, x={x:g}]"))
    return out


def _meta(rng: RngStream, **extra):
    meta = {"seed": rng.seed, "stream_id": rng.stream_id}
    meta.update(extra)
    return meta


def translation_invariance_check(
    drifts, beta: float, shift: float, grid: Grid, xs: Sequence[float], reps: int, rng: RngStream, alpha: float = 0.01, threads=None
) -> TestReport:
    """Re-pinned shifts ``F(shift + x) - F(shift)`` versus fresh unshifted samples."""
    dv = _as_drifts(drifts)
    shifted_nodes = [shift + x for x in xs] + [shift]
    raw = kpzh_values(dv, beta, grid, shifted_nodes, reps, rng.child(0), threads=threads)
    shifted = raw[:, :, :-1] - raw[:, :, -1:]
    plain = kpzh_values(dv, beta, grid, xs, reps, rng.child(1), threads=threads)
    reports = _node_reports("translation", shifted, plain, xs, list(dv))
    return bonferroni_suite("translation_invariance", reports, alpha, _meta(rng, beta=beta, drifts=list(dv), shift=shift))


def scaling_invariance_check(
    drifts, beta: float, gamma: float, shift: float, grid: Grid, xs: Sequence[float], reps: int, rng: RngStream, alpha: float = 0.01, threads=None
) -> TestReport:
    """``F^lambda_beta(gamma^2 x) / gamma + shift x`` versus ``F^{gamma lambda + shift}_{gamma beta}(x)``."""
    dv = _as_drifts(drifts)
    far = [gamma * gamma * x for x in xs]
    raw = kpzh_values(dv, beta, grid, far, reps, rng.child(0), threads=threads)
    scaled = raw / gamma + shift * np.asarray(xs)[None, None, :]
    mapped = DriftVector(tuple(gamma * lam + shift for lam in dv))
    direct = kpzh_values(mapped, gamma * beta, grid, xs, reps, rng.child(1), threads=threads)
    reports = _node_reports("scaling", scaled, direct, xs, list(dv))
    return bonferroni_suite(
        "scaling_invariance", reports, alpha, _meta(rng, beta=beta, drifts=list(dv), gamma=gamma, shift=shift)
    )


def increment_stationarity_check(
    lambda_gap: float, base_drifts: Sequence[float], beta: float, grid: Grid, y: float, reps: int, rng: RngStream, alpha: float = 0.01, threads=None
) -> TestReport:
    """The gap law at ``y`` depends on the drifts only through their difference."""
    samples = []
    for i, base in enumerate(base_drifts):
        vals = kpzh_values((base, base + lambda_gap), beta, grid, [y], reps, rng.child(i), threads=threads)
        samples.append(vals[:, 1, 0] - vals[:, 0, 0])
    reports = [
        ks_two_sample(samples[0], s, name=f"gap[{base_drifts[0]:g} vs {b:g}]") for b, s in zip(base_drifts[1:], samples[1:])
    ]
    return bonferroni_suite(
        "increment_stationarity", reports, alpha, _meta(rng, beta=beta, lambda_gap=lambda_gap, base_drifts=list(base_drifts), y=y)
    )


def consistency_check(
    drifts3, beta: float, grid: Grid, xs: Sequence[float], reps: int, rng: RngStream, alpha: float = 0.01, threads=None
) -> TestReport:
    """Outer members of a three-member family versus a directly built pair."""
    dv = _as_drifts(drifts3)
    if len(dv) != 3:
        raise ValueError("exactly three drifts are required")
    full = kpzh_values(dv, beta, grid, xs, reps, rng.child(0), threads=threads)[:, [0, 2], :]
    pair = kpzh_values((dv[0], dv[2]), beta, grid, xs, reps, rng.child(1), threads=threads)
    gaps_full = full[:, 1:2, :] - full[:, 0:1, :]
    gaps_pair = pair[:, 1:2, :] - pair[:, 0:1, :]
    first = np.concatenate([full, gaps_full], axis=1)
    second = np.concatenate([pair, gaps_pair], axis=1)
    labels = [dv[0], dv[2], f"{dv[2]:g}-{dv[0]:g}"]
    reports = _node_reports("consistency", first, second, xs, labels)
    return bonferroni_suite("consistency", reports, alpha, _meta(rng, beta=beta, drifts=list(dv)))


def marginal_check(
    drifts, beta: float, grid: Grid, y: float, reps: int, rng: RngStream, alpha: float = 0.01, threads=None
) -> TestReport:
    """Each member at ``y`` against ``Normal(lambda_i y, |y|)``."""
    dv = _as_drifts(drifts)
    vals = kpzh_values(dv, beta, grid, [y], reps, rng, threads=threads)
    reports = [
        ks_one_sample(vals[:, i, 0], Normal(lam * y, abs(y)), name=f"marginal[{lam:g}]") for i, lam in enumerate(dv)
    ]
    return bonferroni_suite("kpzh_marginals", reports, alpha, _meta(rng, beta=beta, drifts=list(dv), y=y))
