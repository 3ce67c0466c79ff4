"""Uniform grids, pinned sampled paths, Brownian sampling and rescaling.

Every path lives on a :class:`Grid` whose origin is an exact node, and every
:class:`SampledPath` takes the value ``0.0`` there.  Batched routines work on
``(rows, n_nodes)`` arrays so Monte Carlo drivers can avoid per-path objects.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateGrid,
    DomainExceeded,
    NonAlignedBounds,
    OffGrid,
    WindowTooSmall,
)

_ALIGN_RTOL = 1e-12
_NODE_RTOL = 1e-9
_MIN_SLOPE_NODES = 10


def _lattice_index(value: float, step: float) -> int:
    ratio = value / step
    k = round(ratio)
    if abs(ratio - k) > _ALIGN_RTOL * max(1.0, abs(ratio)):
        raise NonAlignedBounds(f"{value!r} is not an integer multiple of step {step!r}")
    return int(k)


@dataclass(frozen=True)
class Grid:
    """Uniform lattice ``x_min, x_min + step, ..., x_max`` containing 0."""

    x_min: float
    x_max: float
    step: float

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ValueError("step must be positive and finite")
        if not self.x_min <= 0.0 <= self.x_max:
            raise NonAlignedBounds("the origin must lie inside [x_min, x_max]")
        lo = _lattice_index(self.x_min, self.step)
        hi = _lattice_index(self.x_max, self.step)
        if hi - lo + 1 < 3:
            raise DegenerateGrid(f"grid has {hi - lo + 1} nodes, need at least 3")
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)

    @property
    def n_nodes(self) -> int:
        return self._hi - self._lo + 1

    @property
    def origin_index(self) -> int:
        return -self._lo

    @property
    def nodes(self) -> np.ndarray:
        # integer offsets keep the origin at exactly 0.0
        return np.arange(self._lo, self._hi + 1, dtype=np.float64) * self.step

    def index_of(self, x: float) -> int:
        """Index of the node at ``x``; raises :class:`OffGrid` otherwise."""
        ratio = x / self.step
        k = round(ratio)
        if abs(ratio - k) > _NODE_RTOL * max(1.0, abs(ratio)) or not self._lo <= k <= self._hi:
            raise OffGrid(f"{x!r} is not a node of {self}")
        return int(k) - self._lo

    def contains_node(self, x: float) -> bool:
        try:
            self.index_of(x)
        except OffGrid:
            return False
        return True

    def scaled(self, factor: float) -> "Grid":
        """Grid with every node multiplied by ``factor > 0``."""
        return Grid(self._lo * self.step * factor, self._hi * self.step * factor, self.step * factor)


def make_grid(x_min: float, x_max: float, step: float) -> Grid:
    """Build a :class:`Grid`, validating lattice alignment and size."""
    return Grid(float(x_min), float(x_max), float(step))


@dataclass(frozen=True, eq=False)
class SampledPath:
    """A continuous path sampled on ``grid`` and pinned to 0 at the origin.

    ``values`` is stored as a read-only float64 array.  ``drift_label`` is the
    nominal asymptotic slope, carried as metadata only.
    """

    grid: Grid
    values: np.ndarray
    drift_label: float | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.shape != (self.grid.n_nodes,):
            raise ValueError(f"expected {self.grid.n_nodes} values, got shape {vals.shape}")
        if vals[self.grid.origin_index] != 0.0:
            raise ValueError("path is not pinned: value at the origin must be exactly 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def pinned(cls, grid: Grid, values, drift_label: float | None = None) -> "SampledPath":
        """Shift ``values`` so that the origin value is 0, then wrap."""
        vals = np.asarray(values, dtype=np.float64)
        return cls(grid, vals - vals[grid.origin_index], drift_label)

    @classmethod
    def from_function(cls, grid: Grid, func, drift_label: float | None = None) -> "SampledPath":
        return cls.pinned(grid, func(grid.nodes), drift_label)

    def __call__(self, x: float) -> float:
        return float(self.values[self.grid.index_of(x)])

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DriftVector:
    """Strictly increasing drift labels ``lambda_1 < ... < lambda_k``."""

    drifts: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(d) for d in self.drifts)
        if not vals:
            raise ValueError("at least one drift is required")
        if any(not math.isfinite(d) for d in vals):
            raise ValueError("drifts must be finite")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"drifts must be strictly increasing, got {vals}")
        object.__setattr__(self, "drifts", vals)

    def __len__(self) -> int:
        return len(self.drifts)

    def __iter__(self):
        return iter(self.drifts)

    def __getitem__(self, i):
        return self.drifts[i]

    @property
    def min_gap(self) -> float:
        if len(self.drifts) < 2:
            return math.inf
        return min(b - a for a, b in zip(self.drifts, self.drifts[1:]))


_U64 = 2**64


@dataclass(frozen=True)
class RngStream:
    """Seed-derived, splittable random stream.

    The pair ``(seed, stream_id)`` plus an optional child ``key`` feeds a
    :class:`numpy.random.SeedSequence` whose ``spawn_key`` keeps distinct
    streams independent; the bits come from the counter-based Philox engine.
    """

    seed: int
    stream_id: int = 0
    key: tuple[int, ...] = field(default=())

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) < _U64:
                raise ValueError(f"{name} must be an integer in [0, 2**64)")
        object.__setattr__(self, "key", tuple(int(k) for k in self.key))

    def child(self, *index: int) -> "RngStream":
        """Independent sub-stream addressed by ``index``."""
        return RngStream(self.seed, self.stream_id, self.key + tuple(index))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),) + self.key)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence()))


def brownian_rows(grid: Grid, drift: float, diffusivity: float, gen: np.random.Generator, rows: int = 1) -> np.ndarray:
    """Draw ``rows`` two-sided Brownian paths as a ``(rows, n_nodes)`` array.

    The right half is drawn first, then the left half, each built outward
    from the pinned origin.
    """
    if not diffusivity > 0:
        raise ValueError("diffusivity must be positive")
    n = grid.n_nodes
    origin = grid.origin_index
    h = grid.step
    scale = diffusivity * math.sqrt(h)
    out = np.zeros((rows, n))
    n_right = n - 1 - origin
    if n_right:
        inc = gen.standard_normal((rows, n_right))
        inc *= scale
        inc += drift * h
        np.cumsum(inc, axis=1, out=out[:, origin + 1 :])
    if origin:
        inc = gen.standard_normal((rows, origin))
        inc *= -scale
        inc -= drift * h
        np.cumsum(inc, axis=1, out=inc)
        out[:, :origin] = inc[:, ::-1]
    return out


def sample_bm(grid: Grid, drift: float, diffusivity: float, rng: RngStream) -> SampledPath:
    """Two-sided Brownian motion ``diffusivity * B(x) + drift * x`` on ``grid``."""
    values = brownian_rows(grid, drift, diffusivity, rng.generator(), rows=1)[0]
    return SampledPath(grid, values, drift)


def increment(path: SampledPath, x: float, y: float) -> float:
    """``path(y) - path(x)`` for grid nodes ``x`` and ``y``."""
    g = path.grid
    return float(path.values[g.index_of(y)] - path.values[g.index_of(x)])


def rescale_rows(
    values: np.ndarray, source: Grid, gamma: float, alpha: float, target: Grid
) -> np.ndarray:
    """Apply ``f -> f(gamma**2 x) / gamma + alpha x`` to rows of ``values``.

    Source nodes are used directly when ``gamma**2 x`` hits them, otherwise
    the source is linearly interpolated (first-order in the source step).
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    arr = np.asarray(values, dtype=np.float64)
    x = target.nodes
    pos = (gamma * gamma) * x
    slack = _NODE_RTOL * source.step
    if pos[0] < source.x_min - slack or pos[-1] > source.x_max + slack:
        raise DomainExceeded(
            f"rescaled range [{pos[0]}, {pos[-1]}] exceeds source [{source.x_min}, {source.x_max}]"
        )
    frac_index = pos / source.step + source.origin_index
    idx = np.rint(frac_index)
    if np.all(np.abs(frac_index - idx) <= _NODE_RTOL * np.maximum(1.0, np.abs(frac_index))):
        picked = arr[..., idx.astype(np.int64)]
    else:
        nodes = source.nodes
        pos = np.clip(pos, nodes[0], nodes[-1])
        if arr.ndim == 1:
            picked = np.interp(pos, nodes, arr)
        else:
            picked = np.stack([np.interp(pos, nodes, row) for row in arr])
    out = picked / gamma + alpha * x
    out[..., target.origin_index] = 0.0
    return out


def affine_rescale(path: SampledPath, gamma: float, alpha: float, target: Grid | None = None) -> SampledPath:
    """Return ``x -> path(gamma**2 x) / gamma + alpha x``.

    By default the target grid is the source grid divided by ``gamma**2``, so
    every target node maps onto a source node and no interpolation occurs.
    """
    if target is None:
        target = path.grid.scaled(1.0 / (gamma * gamma))
    values = rescale_rows(path.values, path.grid, gamma, alpha, target)
    label = None if path.drift_label is None else gamma * path.drift_label + alpha
    return SampledPath(target, values, label)


def tail_slope(path: SampledPath, window: float) -> float:
    """Least-squares slope of ``path`` over ``[x_min, x_min + window]``.

    Non-finite values (undefined nodes at a truncation edge) are skipped.
    """
    g = path.grid
    if not 0 < window <= abs(g.x_min) + _NODE_RTOL * g.step:
        raise ValueError("window must satisfy 0 < window <= |x_min|")
    count = int(math.floor(window / g.step * (1 + _NODE_RTOL))) + 1
    x = g.nodes[:count]
    v = path.values[:count]
    ok = np.isfinite(v)
    if ok.sum() < _MIN_SLOPE_NODES:
        raise WindowTooSmall(f"window holds {int(ok.sum())} usable nodes, need {_MIN_SLOPE_NODES}")
    x, v = x[ok], v[ok]
    xc = x - x.mean()
    return float(np.dot(xc, v - v.mean()) / np.dot(xc, xc))


def slope_rows(values: np.ndarray, grid: Grid, window: float) -> np.ndarray:
    """Vectorised :func:`tail_slope` over rows of a finite array."""
    count = int(math.floor(window / grid.step * (1 + _NODE_RTOL))) + 1
    if count < _MIN_SLOPE_NODES:
        raise WindowTooSmall(f"window holds {count} nodes, need {_MIN_SLOPE_NODES}")
    x = grid.nodes[:count]
    xc = x - x.mean()
    v = np.asarray(values)[..., :count]
    return (v - v.mean(axis=-1, keepdims=True)) @ xc / np.dot(xc, xc)


def write_paths_csv(target, grid: Grid, columns: Sequence[np.ndarray], names: Iterable[str] | None = None) -> None:
    """Write ``x`` plus one column per path using 17 significant digits.

    ``target`` is a filesystem path or a text stream.  Default column names
    are ``value, value2, value3, ...``.
    """
    cols = [np.asarray(c, dtype=np.float64) for c in columns]
    if names is None:
        names = ["value"] + [f"value{i}" for i in range(2, len(cols) + 1)]
    names = list(names)
    if len(names) != len(cols):
        raise ValueError("one name per column is required")
    table = np.column_stack([grid.nodes] + cols)
    buf = io.StringIO()
    np.savetxt(buf, table, fmt="%.17g", delimiter=",", header=",".join(["x"] + names), comments="")
    text = buf.getvalue()
    if hasattr(target, "write"):
        target.write(text)
    else:
        with open(target, "w", encoding="ascii", newline="") as fh:
            fh.write(text)


def read_paths_csv(source) -> tuple[list[str], np.ndarray]:
    """Inverse of :func:`write_paths_csv`: header names and the numeric table."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="ascii") as fh:
            text = fh.read()
    header, _, body = text.partition("\n")
    table = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    return header.strip().split(","), table
