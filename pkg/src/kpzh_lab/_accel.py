"""Hot prefix kernels with a numba path and a pure-numpy fallback.

Set ``KPZH_LAB_NUMBA=0`` to force the numpy implementation (useful for
debugging and for machines without a working LLVM).  Both backends accept
1-D or 2-D float arrays; a 2-D array is treated as a stack of independent
rows sharing one grid.

NaN inputs are read as ``-inf`` so that undefined nodes at a truncation edge
contribute zero mass instead of poisoning the whole prefix.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DISABLE_VALUES = {"0", "false", "no", "off"}

try:
    if os.environ.get("KPZH_LAB_NUMBA", "1").strip().lower() in _DISABLE_VALUES:
        raise ImportError("numba disabled by KPZH_LAB_NUMBA")
    from numba import njit
except ImportError:
    njit = None

HAS_NUMBA = njit is not None
BACKEND = "numba" if HAS_NUMBA else "numpy"

_NEG_INF = -math.inf


def _as_rows(a):
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise ValueError("expected a 1-D or 2-D array")
    return arr, False


def _init_column(init, rows):
    if init is None:
        return np.full(rows, _NEG_INF)
    col = np.asarray(init, dtype=np.float64)
    if col.ndim == 0:
        return np.full(rows, float(col))
    return np.ascontiguousarray(col.reshape(rows))


# numpy fallbacks


def _log_cumtrapz_exp_numpy(a, log_half_step, start, init):
    rows, n = a.shape
    out = np.full((rows, n), np.nan)
    clean = np.where(np.isnan(a[:, start:]), _NEG_INF, a[:, start:])
    terms = np.empty((rows, n - start))
    terms[:, 0] = init
    if n - start > 1:
        terms[:, 1:] = log_half_step + np.logaddexp(clean[:, :-1], clean[:, 1:])
    out[:, start:] = np.logaddexp.accumulate(terms, axis=1)
    return out


def _running_max_numpy(a, start):
    rows, n = a.shape
    out = np.full((rows, n), np.nan)
    clean = np.where(np.isnan(a[:, start:]), _NEG_INF, a[:, start:])
    out[:, start:] = np.maximum.accumulate(clean, axis=1)
    return out


# numba kernels

if HAS_NUMBA:

    @njit(cache=True, nogil=True, error_model="numpy")
    def _log_cumtrapz_exp_numba(a, log_half_step, start, init):
        # linear-space running sum scaled by exp(-ref), ref = running max of
        # the log-integrand, so each node costs one exp and one log
        rows, n = a.shape
        half_step = math.exp(log_half_step)
        out = np.empty((rows, n))
        for r in range(rows):
            for j in range(start):
                out[r, j] = np.nan
            out[r, start] = init[r]
            prev = a[r, start]
            if prev != prev:
                prev = _NEG_INF
            ref = prev
            if init[r] > ref:
                ref = init[r]
            if ref == _NEG_INF:
                acc = 0.0
                prev_e = 0.0
            else:
                acc = math.exp(init[r] - ref)
                prev_e = math.exp(prev - ref)
            for j in range(start + 1, n):
                cur = a[r, j]
                if cur != cur:
                    cur = _NEG_INF
                if cur > ref:
                    if ref == _NEG_INF:
                        acc = 0.0
                        prev_e = 0.0
                    else:
                        factor = math.exp(ref - cur)
                        acc *= factor
                        prev_e *= factor
                    ref = cur
                cur_e = math.exp(cur - ref) if cur != _NEG_INF else 0.0
                acc += half_step * (prev_e + cur_e)
                out[r, j] = ref + math.log(acc) if acc > 0.0 else _NEG_INF
                prev_e = cur_e
        return out

    @njit(cache=True, nogil=True)
    def _running_max_numba(a, start):
        rows, n = a.shape
        out = np.empty((rows, n))
        for r in range(rows):
            for j in range(start):
                out[r, j] = np.nan
            acc = _NEG_INF
            for j in range(start, n):
                v = a[r, j]
                if v == v and v > acc:
                    acc = v
                out[r, j] = acc
        return out


def log_cumtrapz_exp(a, step, start=0, init=None, backend=None):
    """Running ``log`` of the trapezoidal integral of ``exp(a)``.

    Parameters
    ----------
    a : array_like
        Log-integrand sampled on a uniform grid, shape ``(n,)`` or ``(rows, n)``.
    step : float
        Grid spacing.
    start : int
        Index of the lower integration limit; entries before it are NaN.
    init : float or array_like, optional
        Log of the mass already accumulated at ``start`` (default ``-inf``).
    backend : {"numba", "numpy"}, optional
        Override the module-level backend choice.

    Returns
    -------
    numpy.ndarray
        Same shape as ``a``.
    """
    rows_arr, flat = _as_rows(a)
    rows, n = rows_arr.shape
    if not 0 <= start < n:
        raise ValueError("start index outside the grid")
    init_col = _init_column(init, rows)
    log_half_step = math.log(0.5 * step)
    use = backend or BACKEND
    if use == "numba" and HAS_NUMBA:
        out = _log_cumtrapz_exp_numba(rows_arr, log_half_step, start, init_col)
    else:
        out = _log_cumtrapz_exp_numpy(rows_arr, log_half_step, start, init_col)
    return out[0] if flat else out


def running_max(a, start=0, backend=None):
    """Prefix maximum from index ``start`` onward; NaN before ``start``."""
    rows_arr, flat = _as_rows(a)
    if not 0 <= start < rows_arr.shape[1]:
        raise ValueError("start index outside the grid")
    use = backend or BACKEND
    if use == "numba" and HAS_NUMBA:
        out = _running_max_numba(rows_arr, start)
    else:
        out = _running_max_numpy(rows_arr, start)
    return out[0] if flat else out
