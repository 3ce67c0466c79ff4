"""Semi-discrete polymer partition functions and the kernels around them.

Kernels
    ``q(n, y) = exp(-y) y**n / n!`` (Poisson weights), the heat kernel ``rho``
    and the scaled Poisson kernel ``p_N`` that converges to it.

Partition function
    ``Z(n, y | m, x)`` integrates ``exp(beta * sum_r B_r(u_{r-1}, u_r))`` over
    jump times ``x = u_{m-1} <= u_m <= ... <= u_{n-1} <= u_n = y``.  It is
    evaluated level by level in log space.  Two quadrature rules are offered:

    ``"trapezoid"``
        Nested trapezoid rule; second order in the grid step, and the
        expected total weight is exact for ``n - m <= 2``.
    ``"chain"``
        Product weights ``h * w(u, v)`` with ``w = 1/2`` on the diagonal.
        First order, but it satisfies the split identity
        ``Z(n,y|m,x) = sum_w h Z(n,y|r,w) Z(r-1,w|m,x)`` exactly on the grid.

Deterministic checks cover the moment integrals of ``p_N``, the Dirichlet
integral, and the second moments of the iterated-integral expansion.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special

from . import _accel
from ._parallel import concat_blocks, run_blocks
from .errors import OffGrid, OrderViolated, QuadratureNonconvergent, TooLarge
from .kpzh import markov_chain_values, kpzh_values
from .paths import DriftVector, Grid, RngStream, SampledPath, brownian_rows, make_grid
from .stats import TestReport, bonferroni_suite, ks_two_sample, normal_cdf

SCHEMES = ("trapezoid", "chain")
ITO_STEP = 2.0**-8
ITO_BLOCK = 256
CHAOS_MAX_ORDER = 3
CHAOS_MAX_LEVEL = 8
CALIBRATION_SAFETY = 1.1
_LOG_HALF = math.log(0.5)


# kernels


def poisson_kernel(n, y):
    """``q(n, y) = exp(-y) y**n / n!``, zero off ``Z_{>=0} x [0, inf)``.

    Evaluated through log-gamma, so large ``n`` does not overflow.  Accepts
    scalars or broadcastable arrays; ``q(n, 0) = 1(n == 0)``.
    """
    n_arr = np.asarray(n, dtype=np.float64)
    y_arr = np.asarray(y, dtype=np.float64)
    n_b, y_b = np.broadcast_arrays(n_arr, y_arr)
    support = (n_b >= 0) & (n_b == np.floor(n_b)) & (y_b >= 0)
    n_safe = np.where(support, n_b, 0.0)
    y_safe = np.where(support, y_b, 0.0)
    log_q = -y_safe + special.xlogy(n_safe, y_safe) - special.gammaln(n_safe + 1.0)
    out = np.where(support, np.exp(log_q), 0.0)
    return float(out) if out.ndim == 0 else out


def heat_kernel(t, x):
    """``exp(-x**2 / (2 t)) / sqrt(2 pi t)`` for ``t > 0``, else 0."""
    t_arr, x_arr = np.broadcast_arrays(np.asarray(t, dtype=np.float64), np.asarray(x, dtype=np.float64))
    positive = t_arr > 0
    t_safe = np.where(positive, t_arr, 1.0)
    out = np.where(positive, np.exp(-(x_arr**2) / (2.0 * t_safe)) / np.sqrt(2.0 * math.pi * t_safe), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KernelParams:
    """Arguments of ``p_N(t, y | s, x)``."""

    N: int
    t: float
    s: float
    x: float
    y: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not self.t > self.s:
            raise ValueError("t must exceed s")


def _pn_values(N: int, t: float, y, s: float, x):
    jumps = math.floor(t * N) - math.floor(s * N)
    arg = (t - s) * N + math.sqrt(N) * (np.asarray(y, dtype=np.float64) - np.asarray(x, dtype=np.float64))
    return math.sqrt(N) * poisson_kernel(jumps, arg)


def pn_kernel(params: KernelParams) -> float:
    """``sqrt(N) q(floor(tN) - floor(sN), (t - s) N + sqrt(N) (y - x))``."""
    return float(_pn_values(params.N, params.t, params.y, params.s, params.x))


# partition function


@dataclass(frozen=True)
class PolymerField:
    """Driving Brownian levels ``B_r`` for ``r = first_level, first_level + 1, ...``."""

    levels: tuple
    beta: float
    first_level: int = 0

    def __post_init__(self):
        levels = tuple(self.levels)
        if not levels:
            raise ValueError("at least one level is required")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        grid = levels[0].grid
        for lev in levels:
            if not isinstance(lev, SampledPath):
                raise TypeError("levels must be SampledPath instances")
            if lev.grid != grid:
                raise ValueError("all levels must share one grid")
        object.__setattr__(self, "levels", levels)

    @property
    def grid(self) -> Grid:
        return self.levels[0].grid

    @property
    def last_level(self) -> int:
        return self.first_level + len(self.levels) - 1

    def level(self, r: int) -> SampledPath:
        if not self.first_level <= r <= self.last_level:
            raise IndexError(f"level {r} outside [{self.first_level}, {self.last_level}]")
        return self.levels[r - self.first_level]

    @classmethod
    def sample(cls, grid: Grid, n_levels: int, beta: float, rng: RngStream, first_level: int = 0) -> "PolymerField":
        gen = rng.generator()
        rows = brownian_rows(grid, 0.0, 1.0, gen, n_levels)
        return cls(tuple(SampledPath(grid, r, 0.0) for r in rows), beta, first_level)


def _check_scheme(scheme: str) -> None:
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")


def _prefix(a, step: float, scheme: str):
    """Running log-integral from index 0; ``chain`` puts weight 1/2 on the current node."""
    if scheme == "chain":
        first = a[..., 0] if np.ndim(a) > 1 else a[0]
        return _accel.log_cumtrapz_exp(a, step, 0, init=math.log(0.5 * step) + first)
    return _accel.log_cumtrapz_exp(a, step, 0)


def _forward_rows(levels: Sequence[np.ndarray], beta: float, step: float, scheme: str) -> list[np.ndarray]:
    """``log Z(r, w | first, x)`` for every level, ``x`` at column 0.

    ``levels[j]`` holds ``B_{first + j}`` on the window, shape ``(rows, nodes)``.
    """
    base = beta * (levels[0] - levels[0][..., :1])
    if scheme == "chain":
        base = base.copy()
        base[..., 0] += _LOG_HALF
    out = [base]
    for lev in levels[1:]:
        drive = beta * lev
        out.append(drive + _prefix(out[-1] - drive, step, scheme))
    return out


def _backward_rows(levels: Sequence[np.ndarray], beta: float, step: float, scheme: str) -> list[np.ndarray]:
    """``log Z(last, y | r, w)`` for every level ``r``, ``y`` at the last column.

    Output is ordered like ``levels``.
    """
    last = levels[-1]
    base = beta * (last[..., -1:] - last)
    if scheme == "chain":
        base = base.copy()
        base[..., -1] += _LOG_HALF
    out = [base]
    for lev in reversed(levels[:-1]):
        drive = beta * lev
        tail = _prefix((drive + out[-1])[..., ::-1], step, scheme)[..., ::-1]
        out.append(tail - drive)
    return out[::-1]


def _window(field: PolymerField, n: int, y: float, m: int, x: float):
    if n < m:
        raise OrderViolated(f"level n={n} is below m={m}")
    if y < x:
        raise OrderViolated(f"endpoint y={y} is left of x={x}")
    grid = field.grid
    try:
        ix, iy = grid.index_of(x), grid.index_of(y)
    except OffGrid:
        raise
    return ix, iy, grid.step


def _window_levels(field: PolymerField, lo: int, hi: int, ix: int, iy: int) -> list[np.ndarray]:
    return [field.level(r).values[ix : iy + 1] for r in range(lo, hi + 1)]


def zsd_point(n: int, y: float, m: int, x: float, field: PolymerField, scheme: str = "trapezoid") -> float:
    """``log Z(n, y | m, x)`` by level-by-level prefix integration.

    ``n == m`` returns ``beta * B_m(x, y)`` exactly.

    Raises
    ------
    OrderViolated
        If ``n < m`` or ``y < x``.
    OffGrid
        If ``x`` or ``y`` is not a grid node.
    """
    _check_scheme(scheme)
    ix, iy, step = _window(field, n, y, m, x)
    base = field.level(m)
    if n == m:
        return field.beta * (base.values[iy] - base.values[ix])
    if iy == ix:
        return -math.inf if scheme == "trapezoid" else _chain_diagonal(n - m, step)
    levels = _window_levels(field, m, n, ix, iy)
    return float(_forward_rows(levels, field.beta, step, scheme)[-1][-1])


def _chain_diagonal(depth: int, step: float) -> float:
    # every weight collapses to the diagonal value 1/2
    return depth * math.log(0.5 * step) + _LOG_HALF


def zsd_split(n: int, y: float, m: int, x: float, r: int, field: PolymerField, scheme: str = "trapezoid") -> float:
    """``log Z(n, y | m, x)`` through the intermediate level ``r`` (``m < r <= n``).

    Combines ``Z(r - 1, w | m, x)`` (forward) with ``Z(n, y | r, w)``
    (backward) by quadrature in ``w`` over ``[x, y]``.  Under ``"chain"``
    this reproduces :func:`zsd_point` up to roundoff.
    """
    _check_scheme(scheme)
    if not m < r <= n:
        raise OrderViolated("the split level must satisfy m < r <= n")
    ix, iy, step = _window(field, n, y, m, x)
    if iy == ix:
        return zsd_point(n, y, m, x, field, scheme)
    forward = _forward_rows(_window_levels(field, m, r - 1, ix, iy), field.beta, step, scheme)[-1]
    backward = _backward_rows(_window_levels(field, r, n, ix, iy), field.beta, step, scheme)[0]
    joint = forward + backward
    if scheme == "chain":
        return float(math.log(step) + special.logsumexp(joint))
    return float(_accel.log_cumtrapz_exp(joint, step)[-1])


def boundary_log_partition(n: int, field: PolymerField, initial: SampledPath, left_cut: float | None = None) -> np.ndarray:
    """``log`` of ``int_{L}^{y} exp(beta f(x)) Z(n, y | 0, x) dx`` at every node ``y``.

    ``initial`` holds ``f``; ``L`` defaults to the grid's left end.  Nodes at
    or left of ``L`` are NaN.  Levels used are ``first_level .. first_level + n``.
    """
    grid = field.grid
    if initial.grid != grid:
        raise ValueError("initial data must live on the field's grid")
    start = grid.index_of(grid.x_min if left_cut is None else left_cut)
    beta, step = field.beta, grid.step
    z = beta * initial.values
    for r in range(field.first_level, field.first_level + n + 1):
        drive = beta * field.level(r).values
        z = drive + _accel.log_cumtrapz_exp(z - drive, step, start)
        z[start] = np.nan
    return z


# moment integrals


def _moment_limit(t: float, y: float, alpha: float, M: int) -> float:
    scale = math.sqrt(M / (2.0 * t))
    shift = alpha * t / M
    prefactor = (2.0 * math.pi * t) ** (-M / 2.0) * math.sqrt(math.pi * t / (2.0 * M))
    growth = alpha * alpha * t / (2.0 * M)
    right = math.exp(alpha * y + growth) * special.erfc(-(y + shift) * scale)
    left = math.exp(-alpha * y + growth) * special.erfc((y - shift) * scale)
    return prefactor * (right + left)


def moment_integral_check(N: int, t: float, y: float, alpha: float, M: int, rtol: float = 1e-9) -> tuple[float, float]:
    """Prelimit and limiting values of ``int exp(alpha |x|) p_N(t, y | 0, x)**M dx``.

    The prelimit integral runs over ``(-inf, y + t sqrt(N)]``, the support of
    ``p_N``; the limit replaces ``p_N`` by the heat kernel and is evaluated in
    closed form with ``erfc``.

    Raises
    ------
    QuadratureNonconvergent
        If adaptive quadrature reports an error estimate above ``rtol``.
    """
    if not t > 0 or not alpha > 0 or int(M) != M or M < 1 or int(N) != N or N < 1:
        raise ValueError("need t > 0, alpha > 0, integer M >= 1 and integer N >= 1")
    jumps = math.floor(t * N)
    root_n = math.sqrt(N)
    upper = y + t * root_n

    def integrand(x):
        w = t * N + root_n * (y - x)
        log_q = -w + special.xlogy(jumps, w) - special.gammaln(jumps + 1.0)
        return math.exp(alpha * abs(x) + M * (0.5 * math.log(N) + log_q))

    width = math.sqrt(t / M)
    marks = {y + k * width for k in (-40, -20, -10, -5, -2, -1, 0, 1, 2, 5, 10, 20, 40)}
    marks.add(0.0)
    marks = sorted(v for v in marks if v < upper)
    edges = marks + [upper]
    total, error = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, err = integrate.quad(integrand, -np.inf, edges[0], limit=200)
            total, error = total + value, error + err
            for lo, hi in zip(edges[:-1], edges[1:]):
                value, err = integrate.quad(integrand, lo, hi, limit=200, epsabs=0.0, epsrel=1e-12)
                total, error = total + value, error + err
        except integrate.IntegrationWarning as exc:
            raise QuadratureNonconvergent(str(exc)) from exc
    if not math.isfinite(total) or error > rtol * abs(total):
        raise QuadratureNonconvergent(f"error estimate {error:.3g} exceeds tolerance for integral {total:.6g}")
    return total, _moment_limit(t, y, alpha, M)


# chaos second moments


def weak_compositions(total: int, parts: int):
    """All tuples of ``parts`` nonnegative integers summing to ``total``."""
    for cuts in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, out = -1, []
        for c in cuts:
            out.append(c - prev - 1)
            prev = c
        out.append(total + parts - 1 - prev - 1)
        yield tuple(out)


def simplex_rule(k: int, y: float, points: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on ``{0 < y_1 < ... < y_k < y}`` as gap vectors.

    Returns ``(gaps, weights)`` where ``gaps`` has shape ``(nodes, k + 1)``
    holding ``y_{i+1} - y_i`` with ``y_0 = 0`` and ``y_{k+1} = y``.  Exact for
    integrands polynomial in the gaps of degree below ``2 points - k``.
    """
    base_x, base_w = np.polynomial.legendre.leggauss(points)
    unit_x, unit_w = 0.5 * (base_x + 1.0), 0.5 * base_w
    grids = np.meshgrid(*([unit_x] * k), indexing="ij")
    wgrids = np.meshgrid(*([unit_w] * k), indexing="ij")
    s = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1) * y**k
    remaining = np.full(s.shape[0], float(y))
    gaps = np.empty((s.shape[0], k + 1))
    for j in range(k):
        gaps[:, j] = remaining * (1.0 - s[:, j])
        remaining = remaining * s[:, j]
        weights = weights * s[:, j] ** (k - 1 - j)
    gaps[:, k] = remaining
    return gaps, weights


def _check_chaos_limits(n: int, k: int) -> None:
    if k < 1 or n < 0:
        raise ValueError("need k >= 1 and n >= 0")
    if k > CHAOS_MAX_ORDER or n > CHAOS_MAX_LEVEL:
        raise TooLarge(f"brute force limited to k <= {CHAOS_MAX_ORDER} and n <= {CHAOS_MAX_LEVEL}")


def chaos_second_moment(n: int, k: int, y: float) -> float:
    """``E[I_k(n, y | 0, 0)**2]`` by composition sum and simplex quadrature."""
    _check_chaos_limits(n, k)
    gaps, weights = simplex_rule(k, y, points=max(8, n + k + 2))
    total = 0.0
    for comp in weak_compositions(n, k + 1):
        prod = np.ones(gaps.shape[0])
        for j, a in enumerate(comp):
            prod *= poisson_kernel(a, gaps[:, j]) ** 2
        total += float(weights @ prod)
    return total


def chaos_bound_shape(n: int, k: int, y: float) -> float:
    """Right side of the second-moment bound with the constant set to 1."""
    q2 = poisson_kernel(n, y) ** 2
    return q2 * y**k * n ** (k / 2.0) / ((2 * n + k) ** k * math.gamma((k + 1) / 2.0))


def calibrate_chaos_constant(y: float = 1.0, safety: float = CALIBRATION_SAFETY) -> float:
    """Constant fixed by the ``(k, n) = (1, 1)`` case times ``safety``."""
    return safety * chaos_second_moment(1, 1, y) / chaos_bound_shape(1, 1, y)


def chaos_l2_bruteforce(n: int, k: int, y: float, constant: float | None = None) -> tuple[float, float]:
    """``(exact second moment, C**k * bound shape)``.

    ``constant`` defaults to :func:`calibrate_chaos_constant`.  At ``n = 0``
    the bound shape is 0 for every ``k >= 1`` while the second moment is
    positive, so callers should compare only for ``n >= 1``.

    Raises
    ------
    TooLarge
        If ``k > 3`` or ``n > 8``.
    """
    _check_chaos_limits(n, k)
    c = calibrate_chaos_constant() if constant is None else constant
    return chaos_second_moment(n, k, y), c**k * chaos_bound_shape(n, k, y)


def product_weight(counts, gaps: np.ndarray) -> np.ndarray:
    """``g(n, y)`` of the product bound.

    ``counts`` (level increments) and ``gaps`` (space increments) have
    trailing axis ``k + 1`` and broadcast against each other.
    """
    counts = np.asarray(counts, dtype=np.float64)
    gaps = np.asarray(gaps, dtype=np.float64)
    k = gaps.shape[-1] - 1
    log_g = (
        -2.0 * gaps.sum(axis=-1)
        + 2.0 * math.log(2.0) * counts.sum(axis=-1)
        - 0.5 * (k + 1) * math.log(math.pi)
        + np.sum(
            special.xlogy(2.0 * counts, gaps) - special.gammaln(2.0 * counts + 1.0) - 0.5 * np.log(np.maximum(counts, 1.0)),
            axis=-1,
        )
    )
    return np.exp(log_g)


def dirichlet_integral(counts: Sequence[int], y: float, points: int | None = None) -> float:
    """Quadrature of ``g(n, y)`` over the ordered simplex."""
    counts = tuple(int(a) for a in counts)
    k = len(counts) - 1
    gaps, weights = simplex_rule(k, y, points or max(8, sum(counts) + k + 2))
    return float(weights @ product_weight(counts, gaps))


def dirichlet_closed_form(counts: Sequence[int], y: float) -> float:
    """Closed form of :func:`dirichlet_integral`."""
    counts = tuple(int(a) for a in counts)
    k = len(counts) - 1
    n = sum(counts)
    log_val = (
        2 * n * math.log(2.0)
        + 2 * math.lgamma(n + 1)
        + k * math.log(y)
        + 2 * math.log(poisson_kernel(n, y))
        - 0.5 * (k + 1) * math.log(math.pi)
        - math.lgamma(2 * n + k + 1)
        - 0.5 * sum(math.log(max(a, 1)) for a in counts)
    )
    return math.exp(log_val)


PRODUCT_BOUND_CONSTANT = CALIBRATION_SAFETY * math.pi


def product_bound_ratio(counts, gaps: np.ndarray) -> np.ndarray:
    """``prod q**2 / g`` with the same broadcasting as :func:`product_weight`."""
    counts = np.asarray(counts, dtype=np.float64)
    prod = np.prod(poisson_kernel(counts, gaps) ** 2, axis=-1)
    return prod / product_weight(counts, gaps)


# Monte Carlo checks


def _log_partition_rows(n: int, y: float, gamma: float, reps: int, gen: np.random.Generator, step: float, scheme: str):
    cells = max(1, int(math.ceil(y / step - 1e-9)))
    h = y / cells
    grid_rows = []
    for _ in range(n + 1):
        w = np.zeros((reps, cells + 1))
        np.cumsum(gen.standard_normal((reps, cells)) * math.sqrt(h), axis=1, out=w[:, 1:])
        grid_rows.append(w)
    return _forward_rows(grid_rows, gamma, h, scheme)[-1][:, -1]


def ito_mean_check(
    n: int,
    y: float,
    gamma: float,
    reps: int,
    rng: RngStream,
    step: float = ITO_STEP,
    scheme: str = "trapezoid",
    threads: int | None = None,
) -> TestReport:
    """Sample mean of ``exp(-y - gamma**2 y / 2) Z_gamma(n, y | 0, 0)`` versus ``q(n, y)``.

    Passes iff the mean lies within 3 standard errors of ``q(n, y)``.
    """
    _check_scheme(scheme)
    if n < 0 or not y > 0 or not gamma > 0:
        raise ValueError("need n >= 0, y > 0 and gamma > 0")
    offset = -y - 0.5 * gamma * gamma * y

    def work(b, size):
        gen = rng.child(b).generator()
        return np.exp(offset + _log_partition_rows(n, y, gamma, size, gen, step, scheme))

    values = concat_blocks(run_blocks(work, reps, ITO_BLOCK, threads))
    target = poisson_kernel(n, y)
    se = float(values.std(ddof=1) / math.sqrt(values.size))
    z = (float(values.mean()) - target) / se if se > 0 else 0.0
    p_value = 2.0 * (1.0 - normal_cdf(0.0, 1.0, abs(z)))
    threshold = 2.0 * (1.0 - normal_cdf(0.0, 1.0, 3.0))
    return TestReport(
        f"ito_mean[n={n}, y={y:g}, gamma={gamma:g}]",
        z,
        p_value,
        int(values.size),
        0,
        threshold,
        abs(z) <= 3.0,
        {
            "criterion": "|mean - q(n, y)| <= 3 standard errors",
            "mean": float(values.mean()),
            "standard_error": se,
            "target": target,
            "step": step,
            "scheme": scheme,
            "seed": rng.seed,
            "stream_id": rng.stream_id,
        },
    )


DEFAULT_INVARIANCE_NODES = (-2.0, -1.0, 0.5, 1.0, 2.0)


def zsd_ratio_invariance(
    drifts,
    beta: float,
    steps,
    reps: int,
    rng: RngStream,
    grid: Grid | None = None,
    xs: Sequence[float] = DEFAULT_INVARIANCE_NODES,
    alpha: float = 0.01,
    threads: int | None = None,
) -> TestReport:
    """Normalized boundary partition functions started from the coupled family.

    The normalized partition function after ``s`` levels equals the family
    pushed through ``s`` steps of ``eta <- D(B, eta)``; the evolved values at
    ``xs`` are compared with a fresh sample by two-sample KS per member, node
    and step count, Bonferroni-corrected.  ``steps`` may be an int or a list;
    step count 0 compares the chain input with itself.
    """
    dv = drifts if isinstance(drifts, DriftVector) else DriftVector(tuple(drifts))
    if min(dv) <= 0:
        raise ValueError("drifts must be strictly positive")
    wanted = sorted({int(s) for s in ([steps] if np.isscalar(steps) else steps)})
    if not wanted or wanted[0] < 0:
        raise ValueError("steps must be nonnegative")
    grid = grid or make_grid(-30.0, 5.0, 2.0**-10)
    evolved = markov_chain_values(dv, beta, grid, xs, wanted, reps, rng.child(0), threads=threads)
    fresh = kpzh_values(dv, beta, grid, xs, reps, rng.child(1), threads=threads) if wanted[-1] > 0 else None
    reports = []
    for s in wanted:
        other = evolved[s] if s == 0 else fresh
        for c, lam in enumerate(dv):
            for j, x in enumerate(xs):
                reports.append(ks_two_sample(evolved[s][:, c, j], other[:, c, j], name=f"ocy_invariance[step={s}, {lam:g}, x={x:g}]"))
    meta = {
        "beta": beta,
        "drifts": list(dv),
        "steps": wanted,
        "grid": [grid.x_min, grid.x_max, grid.step],
        "seed": rng.seed,
        "stream_id": rng.stream_id,
    }
    return bonferroni_suite("ocy_ratio_invariance", reports, alpha, meta)
