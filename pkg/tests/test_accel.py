from __future__ import annotations

import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kpzh_lab import _accel

finite = st.floats(-50, 50, allow_nan=False)


def reference_log_cumtrapz(a, step, start, init):
    out = np.full(a.shape, np.nan)
    total = math.exp(init) if init > -math.inf else 0.0
    out[start] = math.log(total) if total > 0 else -math.inf
    for j in range(start + 1, a.size):
        total += 0.5 * step * (math.exp(a[j - 1]) + math.exp(a[j]))
        out[j] = math.log(total)
    return out


@given(arrays(np.float64, st.integers(2, 40), elements=finite), st.integers(0, 5), st.sampled_from([-math.inf, 0.0, -3.0]))
def test_log_cumtrapz_matches_direct_sum(a, start, init):
    start = min(start, a.size - 1)
    ref = reference_log_cumtrapz(a, 0.1, start, init)
    for backend in ("numpy", "numba"):
        got = _accel.log_cumtrapz_exp(a, 0.1, start, init=init, backend=backend)
        np.testing.assert_allclose(got[start + 1 :], ref[start + 1 :], rtol=1e-12, atol=1e-12)
        assert np.all(np.isnan(got[:start]))


@given(arrays(np.float64, (3, 30), elements=st.floats(-700, 700, allow_nan=False)))
def test_backends_agree_on_large_exponents(a):
    x = _accel.log_cumtrapz_exp(a, 1e-3, 2, backend="numpy")
    y = _accel.log_cumtrapz_exp(a, 1e-3, 2, backend="numba")
    assert np.all(np.isfinite(y[:, 3:]))
    np.testing.assert_allclose(x[:, 3:], y[:, 3:], rtol=1e-12, atol=1e-9)


def test_nan_inputs_are_treated_as_minus_infinity():
    a = np.array([np.nan, np.nan, 0.0, 0.0])
    for backend in ("numpy", "numba"):
        out = _accel.log_cumtrapz_exp(a, 1.0, 0, backend=backend)
        np.testing.assert_allclose(out[2:], [math.log(0.5), math.log(1.5)], rtol=1e-14)


@given(arrays(np.float64, (2, 25), elements=finite), st.integers(0, 10))
def test_running_max(a, start):
    for backend in ("numpy", "numba"):
        out = _accel.running_max(a, start, backend=backend)
        np.testing.assert_array_equal(out[:, start:], np.maximum.accumulate(a[:, start:], axis=1))


def test_start_out_of_range():
    with pytest.raises(ValueError):
        _accel.log_cumtrapz_exp(np.zeros(3), 1.0, 3)


def test_env_flag_disables_numba():
    code = "from kpzh_lab import _accel; print(_accel.BACKEND)"
    env = dict(os.environ, KPZH_LAB_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
