"""Queueing transforms on pinned paths and their zero-temperature analogues.

For a driver ``B`` and a service path ``Y`` with ``Y`` steeper than ``B`` at
``-inf``, the positive-temperature maps are

* ``Q(y) = (B(y) - Y(y)) + log(int_L^y exp(beta (Y - B))) / beta``
* ``D(y) = B(y) + [log I(y) - log I(0)] / beta``
* ``R(y) = Y(y) - [log I(y) - log I(0)] / beta``

where ``I(y) = int_L^y exp(beta (Y - B))`` and ``L`` is the left truncation
point.  Integrals use the trapezoid rule in log space.

Nodes at or left of the truncation point carry no mass and are reported as
NaN unless tail correction is enabled, in which case the discarded tail
``int_{-inf}^L`` is replaced by ``exp(beta g(L)) / (beta * gap)``, the exact
value for a straight line of slope ``gap``.

The ``*_rows`` functions are the batched array kernels used by the Monte
Carlo drivers; the path-level functions wrap them with validation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel
from .errors import DriftGapViolated, EmptyRange
from .paths import DriftVector, Grid, SampledPath, affine_rescale

_MIN_GAP_NODES = 10


@dataclass(frozen=True)
class TransformConfig:
    """Inverse temperature, truncation point and precondition policy.

    ``left_cut`` defaults to the grid's ``x_min``.  With ``strict`` a
    non-positive estimated drift gap raises :class:`DriftGapViolated`;
    otherwise it warns.
    """

    beta: float
    left_cut: float | None = None
    strict: bool = False
    tail_correction: bool = False

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError("beta must be positive and finite")

    def start_index(self, grid: Grid) -> int:
        cut = grid.x_min if self.left_cut is None else self.left_cut
        if cut < grid.x_min:
            raise ValueError("left_cut lies left of the grid")
        idx = grid.index_of(cut)
        if idx >= grid.origin_index:
            raise EmptyRange("left_cut must be strictly negative")
        return idx

    def with_beta(self, beta: float) -> "TransformConfig":
        return TransformConfig(beta, self.left_cut, self.strict, self.tail_correction)


@dataclass(frozen=True, eq=False)
class CouplingSample:
    """Paths on a common grid with strictly increasing drift labels."""

    paths: tuple[SampledPath, ...]
    drifts: DriftVector

    def __post_init__(self):
        paths = tuple(self.paths)
        if len(paths) != len(self.drifts):
            raise ValueError("one path per drift is required")
        grid = paths[0].grid
        if any(p.grid != grid for p in paths):
            raise ValueError("all paths must share one grid")
        object.__setattr__(self, "paths", paths)

    @property
    def grid(self) -> Grid:
        return self.paths[0].grid

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, i) -> SampledPath:
        return self.paths[i]

    def ordering_violation(self) -> float:
        """Largest ``p_i(x, y) - p_{i+1}(x, y)`` over consecutive members and ``x < y``.

        Zero (or negative) means increments are ordered everywhere.
        """
        worst = -math.inf
        for lo, hi in zip(self.paths, self.paths[1:]):
            worst = max(worst, float(np.max(increment_order_violation(lo.values, hi.values))))
        return max(worst, 0.0) if len(self.paths) > 1 else 0.0


def increment_order_violation(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Per-row ``max_{x<y} [lower(x, y) - upper(x, y)]`` over finite nodes.

    The difference ``upper - lower`` must be nondecreasing for the rows to be
    increment ordered, so the violation is its largest drop.
    """
    diff = np.asarray(upper, dtype=np.float64) - np.asarray(lower, dtype=np.float64)
    diff = np.atleast_2d(diff)
    finite = np.isfinite(diff)
    filled = np.where(finite, diff, -np.inf)
    peak = np.maximum.accumulate(filled, axis=1)
    drop = np.where(finite, peak - diff, -np.inf)
    return np.max(drop, axis=1)


# batched kernels


def log_integral_rows(g, step: float, beta: float, start: int, tail_gap=None) -> np.ndarray:
    """``log int_L^y exp(beta g)`` for every node ``y`` of every row.

    ``tail_gap`` (scalar, per-row array, or None) enables the straight-line
    tail estimate for the mass left of ``L``.
    """
    a = beta * np.asarray(g, dtype=np.float64)
    if tail_gap is None:
        out = _accel.log_cumtrapz_exp(a, step, start)
        out[..., start] = np.nan
        return out
    gap = np.asarray(tail_gap, dtype=np.float64)
    init = a[..., start] - np.log(beta * gap)
    return _accel.log_cumtrapz_exp(a, step, start, init)


def d_rows(b, y, grid: Grid, beta: float, start: int, tail_gap=None) -> np.ndarray:
    """Batched departure map; rows of ``b`` and ``y`` pair up."""
    b = np.asarray(b, dtype=np.float64)
    log_int = log_integral_rows(np.asarray(y) - b, grid.step, beta, start, tail_gap)
    o = grid.origin_index
    return b + (log_int - log_int[..., o : o + 1]) / beta


def r_rows(b, y, grid: Grid, beta: float, start: int, tail_gap=None) -> np.ndarray:
    """Batched recycled-driver map."""
    y = np.asarray(y, dtype=np.float64)
    log_int = log_integral_rows(y - np.asarray(b), grid.step, beta, start, tail_gap)
    o = grid.origin_index
    return y - (log_int - log_int[..., o : o + 1]) / beta


def q_rows(b, y, grid: Grid, beta: float, start: int, tail_gap=None) -> np.ndarray:
    """Batched log-integrated waiting functional (not pinned)."""
    diff = np.asarray(y, dtype=np.float64) - np.asarray(b)
    return -diff + log_integral_rows(diff, grid.step, beta, start, tail_gap) / beta


def d_iter_rows(ys: Sequence[np.ndarray], grid: Grid, beta: float, start: int, drifts=None) -> np.ndarray:
    """Batched iterate ``D(Y1, D(Y2, ... D(Y_{n-1}, Y_n)))``.

    With ``drifts`` given the tail correction uses gaps ``drifts[-1] - drifts[i]``.
    """
    out = np.asarray(ys[-1], dtype=np.float64)
    for i in range(len(ys) - 2, -1, -1):
        gap = None if drifts is None else drifts[-1] - drifts[i]
        out = d_rows(ys[i], out, grid, beta, start, gap)
    return out


def coupling_rows(ys: Sequence[np.ndarray], grid: Grid, beta: float, start: int, drifts=None) -> list[np.ndarray]:
    """All levels ``eta^i = D^(i)(Y1, ..., Y_i)`` for ``i = 1..k``."""
    out = [np.asarray(ys[0], dtype=np.float64)]
    for i in range(2, len(ys) + 1):
        sub = None if drifts is None else drifts[:i]
        out.append(d_iter_rows(ys[:i], grid, beta, start, sub))
    return out


def nested_log_integral_rows(ys: Sequence[np.ndarray], step: float, beta: float, start: int) -> np.ndarray:
    """Log of the iterated integral over ``L < x_{n-1} < ... < x_1 < y``.

    The integrand is ``prod_i exp(beta (Y_{i+1} - Y_i)(x_i))``; one prefix
    pass per level, innermost first.
    """
    n = len(ys)
    inner = None
    for i in range(n - 2, -1, -1):
        a = beta * (np.asarray(ys[i + 1], dtype=np.float64) - np.asarray(ys[i]))
        if inner is not None:
            a = a + inner
        inner = _accel.log_cumtrapz_exp(a, step, start)
        inner[..., start] = np.nan
    return inner


# validation helpers


def _slope_between(values: np.ndarray, grid: Grid, start: int) -> float | None:
    stop = start + (grid.origin_index - start) // 2 + 1
    if stop - start < _MIN_GAP_NODES:
        return None
    x = grid.nodes[start:stop]
    v = values[start:stop]
    ok = np.isfinite(v)
    if ok.sum() < _MIN_GAP_NODES:
        return None
    x, v = x[ok], v[ok]
    xc = x - x.mean()
    return float(np.dot(xc, v - v.mean()) / np.dot(xc, xc))


def estimated_gap(B: SampledPath, Y: SampledPath, cfg: TransformConfig) -> float | None:
    """Least-squares slope of ``Y - B`` on the left half of ``[left_cut, 0]``."""
    _same_grid(B, Y)
    start = cfg.start_index(B.grid)
    return _slope_between(Y.values - B.values, B.grid, start)


def check_drift_gap(B: SampledPath, Y: SampledPath, cfg: TransformConfig) -> float | None:
    """Validate the drift condition; raise in strict mode, warn otherwise."""
    gap = estimated_gap(B, Y, cfg)
    if gap is not None and gap <= 0:
        msg = f"estimated drift gap {gap:.4g} is not positive; truncated integrals are unreliable"
        if cfg.strict:
            raise DriftGapViolated(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return gap


def tail_mass_bound(B: SampledPath, Y: SampledPath, cfg: TransformConfig, gap: float | None = None) -> float:
    """Relative size of the discarded left tail of ``int exp(beta (Y - B))``.

    Uses the straight-line estimate ``exp(beta g(L)) / (beta gap)`` divided by
    the retained mass up to the origin.  ``gap`` defaults to the drift-label
    difference, falling back to the estimated slope gap.
    """
    if gap is None:
        gap = _label_gap(B, Y)
    if gap is None:
        gap = estimated_gap(B, Y, cfg)
    if gap is None or gap <= 0:
        return math.inf
    grid = B.grid
    start = cfg.start_index(grid)
    g = Y.values - B.values
    log_int = log_integral_rows(g, grid.step, cfg.beta, start)
    log_tail = cfg.beta * g[start] - math.log(cfg.beta * gap)
    return math.exp(log_tail - log_int[grid.origin_index])


def _same_grid(*paths: SampledPath) -> Grid:
    grid = paths[0].grid
    for p in paths[1:]:
        if p.grid != grid:
            raise ValueError("paths live on different grids")
    return grid


def _label_gap(B: SampledPath, Y: SampledPath) -> float | None:
    if B.drift_label is None or Y.drift_label is None:
        return None
    return Y.drift_label - B.drift_label


def _tail_gap(B: SampledPath, Y: SampledPath, cfg: TransformConfig, estimate: float | None) -> float | None:
    if not cfg.tail_correction:
        return None
    gap = _label_gap(B, Y)
    if gap is None or gap <= 0:
        gap = estimate
    return gap if gap is not None and gap > 0 else None


def _prepare(B: SampledPath, Y: SampledPath, cfg: TransformConfig):
    grid = _same_grid(B, Y)
    start = cfg.start_index(grid)
    est = check_drift_gap(B, Y, cfg)
    return grid, start, _tail_gap(B, Y, cfg, est)


# path-level transforms


def prefix_log_int_exp(g, beta: float, grid: Grid, left_cut: float | None = None, y: float | None = None):
    """``log(int_{left_cut}^y exp(beta g)) / beta`` by log-space trapezoid.

    Returns the whole array over the grid (NaN at and left of ``left_cut``),
    or the value at node ``y`` when ``y`` is given.
    """
    values = g.values if isinstance(g, SampledPath) else np.asarray(g, dtype=np.float64)
    cut = grid.x_min if left_cut is None else left_cut
    start = grid.index_of(cut)
    if y is not None:
        if y <= cut:
            raise EmptyRange(f"empty integration range [{cut}, {y}]")
        j = grid.index_of(y)
    out = _accel.log_cumtrapz_exp(beta * values, grid.step, start) / beta
    out[start] = np.nan
    return float(out[j]) if y is not None else out


def q_map(B: SampledPath, Y: SampledPath, cfg: TransformConfig) -> np.ndarray:
    """Waiting functional ``Q(y)`` at every node (not pinned; NaN left of the cut)."""
    grid, start, tail = _prepare(B, Y, cfg)
    return q_rows(B.values, Y.values, grid, cfg.beta, start, tail)


def d_map(B: SampledPath, Y: SampledPath, cfg: TransformConfig) -> SampledPath:
    """Departure map ``D(B, Y)``; carries ``Y``'s drift label."""
    grid, start, tail = _prepare(B, Y, cfg)
    return SampledPath(grid, d_rows(B.values, Y.values, grid, cfg.beta, start, tail), Y.drift_label)


def r_map(B: SampledPath, Y: SampledPath, cfg: TransformConfig) -> SampledPath:
    """Recycled-driver map ``R(B, Y)``; carries ``B``'s drift label."""
    grid, start, tail = _prepare(B, Y, cfg)
    return SampledPath(grid, r_rows(B.values, Y.values, grid, cfg.beta, start, tail), B.drift_label)


def d_iter(ys: Sequence[SampledPath], cfg: TransformConfig) -> SampledPath:
    """Iterate ``D(Y1, D(Y2, ..., D(Y_{n-1}, Y_n)))``; identity for one path."""
    ys = list(ys)
    if not ys:
        raise ValueError("at least one path is required")
    out = ys[-1]
    for path in reversed(ys[:-1]):
        out = d_map(path, out, cfg)
    return out


def d_iter_closed_form(ys: Sequence[SampledPath], cfg: TransformConfig) -> SampledPath:
    """Iterate evaluated as one nested integral ratio.

    ``exp(beta D(y)) = exp(beta Y1(y)) J(y) / J(0)`` where ``J`` is the
    iterated integral built by :func:`nested_log_integral_rows`.  No tail
    correction is applied.
    """
    ys = list(ys)
    if len(ys) == 1:
        return ys[0]
    grid = _same_grid(*ys)
    start = cfg.start_index(grid)
    log_j = nested_log_integral_rows([p.values for p in ys], grid.step, cfg.beta, start)
    o = grid.origin_index
    values = ys[0].values + (log_j - log_j[o]) / cfg.beta
    return SampledPath(grid, values, ys[-1].drift_label)


def multiline_step(B: SampledPath, ys: Sequence[SampledPath], cfg: TransformConfig, return_driver: bool = False):
    """One step of the multiline chain driven by ``B``.

    ``B_1 = B``, ``out_i = D(B_i, Y_i)``, ``B_{i+1} = R(B_i, Y_i)``.  With
    ``return_driver`` the final recycled driver is returned as well.
    """
    driver = B
    outs = []
    for y in ys:
        outs.append(d_map(driver, y, cfg))
        driver = r_map(driver, y, cfg)
    return (outs, driver) if return_driver else outs


def markov_step(B: SampledPath, etas: CouplingSample, cfg: TransformConfig) -> CouplingSample:
    """Apply ``D(B, .)`` to every member with one common driver."""
    return CouplingSample(tuple(d_map(B, eta, cfg) for eta in etas.paths), etas.drifts)


def intertwine_residual(
    B1: SampledPath,
    Y1: SampledPath,
    Y2: SampledPath,
    cfg: TransformConfig,
    order: str = "driver_first",
    window: tuple[float, float] | None = None,
) -> float:
    """Sup-distance between ``D(D(B1,Y1), D(B2,Y2))`` and ``D(B1, D(Y1, Y2))``.

    ``B2 = R(B1, Y1)`` for ``order="driver_first"``; ``order="swapped"`` uses
    ``R(Y1, B1)`` instead, which violates the drift condition.  The sup is
    taken over grid nodes inside ``window`` (default: from half the
    truncation point to ``x_max``) so the left-edge truncation layer does not
    mask discretization error.
    """
    grid = _same_grid(B1, Y1, Y2)
    start = cfg.start_index(grid)
    beta = cfg.beta
    labels = [p.drift_label for p in (B1, Y1, Y2)]
    use_tail = cfg.tail_correction and None not in labels
    lam_b, lam_1, lam_2 = labels if use_tail else (0.0, 0.0, 0.0)

    def gap(v):
        return v if use_tail else None

    if cfg.strict:
        check_drift_gap(B1, Y1, cfg)
        check_drift_gap(Y1, Y2, cfg)
    b1, y1, y2 = B1.values, Y1.values, Y2.values
    if order == "driver_first":
        b2 = r_rows(b1, y1, grid, beta, start, gap(lam_1 - lam_b))
    elif order == "swapped":
        b2 = r_rows(y1, b1, grid, beta, start, None)
    else:
        raise ValueError("order must be 'driver_first' or 'swapped'")
    first = d_rows(b1, y1, grid, beta, start, gap(lam_1 - lam_b))
    second = d_rows(b2, y2, grid, beta, start, gap(lam_2 - lam_b))
    lhs = d_rows(first, second, grid, beta, start, gap(lam_2 - lam_1))
    rhs = d_iter_rows([b1, y1, y2], grid, beta, start, [lam_b, lam_1, lam_2] if use_tail else None)
    lo, hi = window if window is not None else (0.5 * grid.nodes[start], grid.x_max)
    mask = (grid.nodes >= lo) & (grid.nodes <= hi)
    diff = np.abs(lhs - rhs)[mask]
    if not np.all(np.isfinite(diff)):
        return math.inf
    return float(np.max(diff))


def scaling_residual(ys: Sequence[SampledPath], cfg: TransformConfig, gamma: float, alpha: float) -> float:
    """Sup-distance between ``T(D^(n)_beta(ys))`` and ``D^(n)_{gamma beta}(T ys)``.

    ``T f(x) = f(gamma**2 x) / gamma + alpha x`` maps onto the grid scaled by
    ``gamma**-2`` so nodes correspond exactly; the truncation point moves to
    ``left_cut / gamma**2``.  Nodes at the truncation point are skipped.
    """
    ys = list(ys)
    grid = _same_grid(*ys)
    cut = grid.x_min if cfg.left_cut is None else cfg.left_cut
    target = grid.scaled(1.0 / (gamma * gamma))
    lhs = affine_rescale(d_iter(ys, cfg), gamma, alpha, target)
    moved = [affine_rescale(p, gamma, alpha, target) for p in ys]
    scaled_cfg = TransformConfig(cfg.beta * gamma, cut / (gamma * gamma), cfg.strict, False)
    rhs = d_iter(moved, scaled_cfg)
    diff = np.abs(lhs.values - rhs.values)
    finite = np.isfinite(diff)
    if not np.any(finite):
        return math.inf
    return float(np.max(diff[finite]))


# zero temperature


def sh_d_rows(b, y, grid: Grid, start: int = 0) -> np.ndarray:
    """Batched max-plus departure map ``B(y) + M(y) - M(0)``, ``M`` the running sup of ``Y - B``."""
    b = np.asarray(b, dtype=np.float64)
    peak = _accel.running_max(np.asarray(y) - b, start)
    o = grid.origin_index
    return b + (peak - peak[..., o : o + 1])


def sh_d_map(B: SampledPath, Y: SampledPath, left_cut: float | None = None) -> SampledPath:
    """Zero-temperature departure map by one running-max pass."""
    grid = _same_grid(B, Y)
    start = grid.index_of(grid.x_min if left_cut is None else left_cut)
    if start >= grid.origin_index:
        raise EmptyRange("left_cut must be strictly negative")
    return SampledPath(grid, sh_d_rows(B.values, Y.values, grid, start), Y.drift_label)


def sh_d_iter_rows(ys: Sequence[np.ndarray], grid: Grid, start: int = 0) -> np.ndarray:
    """Max-plus dynamic program for ``Y1(y) + sup_{x_{n-1} <= ... <= x_1 <= y} sum_i (Y_{i+1} - Y_i)(x_i)``.

    One running-max pass per level, innermost level first; the value at the
    origin is subtracted to pin the result.
    """
    ys = [np.asarray(v, dtype=np.float64) for v in ys]
    if len(ys) == 1:
        return ys[0]
    value = None
    for i in range(len(ys) - 2, -1, -1):
        gain = ys[i + 1] - ys[i]
        value = _accel.running_max(gain if value is None else gain + value, start)
    o = grid.origin_index
    return ys[0] + (value - value[..., o : o + 1])


def sh_d_iter(ys: Sequence[SampledPath], left_cut: float | None = None) -> SampledPath:
    """Zero-temperature iterate computed by :func:`sh_d_iter_rows`."""
    ys = list(ys)
    if not ys:
        raise ValueError("at least one path is required")
    grid = _same_grid(*ys)
    if len(ys) == 1:
        return ys[0]
    start = grid.index_of(grid.x_min if left_cut is None else left_cut)
    return SampledPath(grid, sh_d_iter_rows([p.values for p in ys], grid, start), ys[-1].drift_label)


__all__ = [
    "CouplingSample",
    "TransformConfig",
    "check_drift_gap",
    "coupling_rows",
    "d_iter",
    "d_iter_closed_form",
    "d_iter_rows",
    "d_map",
    "d_rows",
    "estimated_gap",
    "increment_order_violation",
    "intertwine_residual",
    "log_integral_rows",
    "markov_step",
    "multiline_step",
    "nested_log_integral_rows",
    "prefix_log_int_exp",
    "q_map",
    "q_rows",
    "r_map",
    "r_rows",
    "scaling_residual",
    "sh_d_iter",
    "sh_d_iter_rows",
    "sh_d_map",
    "sh_d_rows",
    "tail_mass_bound",
]
