"""Goodness-of-fit tests, reference distributions and verdict records.

Kolmogorov-Smirnov statistics are computed here; their asymptotic p-values
come from the Kolmogorov limiting distribution in :mod:`scipy.special`.  The
regularized incomplete gamma function is implemented with a power series
and a continued fraction so the two evaluations can cross-check each other.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import special

from .errors import DomainError, TooFewSamples

MIN_KS_SAMPLES = 100
_EPS = 1e-16
_MAX_TERMS = 100_000


@dataclass
class TestReport:
    """Verdict of one statistical or deterministic check.

    ``passed`` is ``p_value > threshold`` unless ``metadata["criterion"]``
    names another rule (for example a confidence-interval criterion).
    """

    __test__ = False  # not a pytest class

    name: str
    statistic: float
    p_value: float
    n1: int
    n2: int
    threshold: float
    passed: bool
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "statistic": _json_number(self.statistic),
            "p_value": _json_number(self.p_value),
            "n1": int(self.n1),
            "n2": int(self.n2),
            "threshold": _json_number(self.threshold),
            "pass": bool(self.passed),
            "metadata": _jsonable(self.metadata),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _json_number(v):
    v = float(v)
    return v if math.isfinite(v) else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _json_number(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def reports_to_json(reports: Iterable[TestReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)


def summary_line(reports: Sequence[TestReport]) -> str:
    """Machine-readable ``PASS k/n`` line."""
    return f"PASS {sum(1 for r in reports if r.passed)}/{len(reports)}"


def bonferroni(alpha: float, m: int) -> float:
    """Per-test threshold keeping the family-wise level at ``alpha``."""
    return alpha / max(int(m), 1)


# special functions


def _check_positive(**params):
    for name, v in params.items():
        if not (np.all(np.asarray(v) > 0) and np.all(np.isfinite(v))):
            raise DomainError(f"{name} must be positive and finite")


def lgamma(x):
    """Log of the absolute gamma function."""
    out = special.gammaln(x)
    return float(out) if np.ndim(out) == 0 else out


def erfc(x):
    """Complementary error function ``(2/sqrt(pi)) int_x^inf exp(-u^2) du``."""
    out = special.erfc(x)
    return float(out) if np.ndim(out) == 0 else out


def normal_cdf(mu: float, sigma2: float, x):
    """CDF of ``Normal(mu, sigma2)`` through ``erfc`` (accurate in both tails)."""
    _check_positive(sigma2=sigma2)
    z = (np.asarray(x, dtype=np.float64) - mu) / math.sqrt(2.0 * sigma2)
    out = 0.5 * special.erfc(-z)
    return float(out) if np.ndim(out) == 0 else out


def _log_gamma_prefactor(a, x):
    with np.errstate(divide="ignore"):
        return a * np.log(x) - x - special.gammaln(a)


def gamma_p_series(a, x):
    """Regularized lower incomplete gamma ``P(a, x)`` by its power series.

    Converges for all ``x >= 0`` but is only efficient for ``x < a + 1``.
    """
    a, x = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(x, dtype=np.float64))
    a = a.ravel().copy()
    x = x.ravel().copy()
    out = np.zeros_like(x)
    live = x > 0
    term = np.where(live, 1.0 / a, 0.0)
    total = term.copy()
    denom = a.copy()
    for _ in range(_MAX_TERMS):
        if not live.any():
            break
        denom[live] += 1.0
        term[live] *= x[live] / denom[live]
        total[live] += term[live]
        live &= np.abs(term) > np.abs(total) * _EPS
    pos = x > 0
    out[pos] = total[pos] * np.exp(_log_gamma_prefactor(a[pos], x[pos]))
    return out


def gamma_q_continued_fraction(a, x):
    """Regularized upper incomplete gamma ``Q(a, x)`` by modified Lentz.

    Converges for ``x > 0`` and is efficient for ``x > a + 1``.
    """
    a, x = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(x, dtype=np.float64))
    a = a.ravel().copy()
    x = x.ravel().copy()
    tiny = 1e-300
    b = x + 1.0 - a
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    live = np.ones(x.shape, dtype=bool)
    for i in range(1, _MAX_TERMS):
        if not live.any():
            break
        an = -i * (i - a[live])
        b[live] += 2.0
        dl = an * d[live] + b[live]
        dl = np.where(np.abs(dl) < tiny, tiny, dl)
        cl = b[live] + an / c[live]
        cl = np.where(np.abs(cl) < tiny, tiny, cl)
        dl = 1.0 / dl
        delta = dl * cl
        d[live] = dl
        c[live] = cl
        h[live] *= delta
        done = np.abs(delta - 1.0) <= _EPS
        idx = np.flatnonzero(live)
        live[idx[done]] = False
    return np.exp(_log_gamma_prefactor(a, x)) * h


def gamma_cdf(shape: float, rate: float, x):
    """CDF of ``Gamma(shape, rate)`` (density proportional to ``x^(shape-1) e^(-rate x)``)."""
    _check_positive(shape=shape, rate=rate)
    xs = np.asarray(x, dtype=np.float64)
    z = np.maximum(xs, 0.0) * rate
    zf = z.ravel()
    out = np.zeros_like(zf)
    low = zf < shape + 1.0
    if low.any():
        out[low] = gamma_p_series(shape, zf[low])
    high = ~low
    if high.any():
        out[high] = 1.0 - gamma_q_continued_fraction(shape, zf[high])
    out = out.reshape(z.shape)
    return float(out) if out.ndim == 0 else out


# reference distributions


@dataclass(frozen=True)
class Normal:
    mu: float
    sigma2: float

    def cdf(self, x):
        return normal_cdf(self.mu, self.sigma2, x)

    def describe(self) -> str:
        return f"Normal({self.mu:g}, {self.sigma2:g})"


@dataclass(frozen=True)
class Gamma:
    shape: float
    rate: float

    def cdf(self, x):
        return gamma_cdf(self.shape, self.rate, x)

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def describe(self) -> str:
        return f"Gamma(shape={self.shape:g}, rate={self.rate:g})"


# Kolmogorov-Smirnov


def _clean(samples, name: str) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64).ravel()
    if arr.size < MIN_KS_SAMPLES:
        raise TooFewSamples(f"{name}: {arr.size} samples, need at least {MIN_KS_SAMPLES}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: samples contain non-finite values")
    return arr


def ks_statistic_one_sample(samples, cdf) -> float:
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    f = np.asarray(cdf(x), dtype=np.float64)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_statistic_two_sample(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_one_sample(samples, reference, name: str = "ks_one_sample", threshold: float = 0.01, metadata=None) -> TestReport:
    """Two-sided one-sample KS test against ``reference`` (Normal or Gamma)."""
    x = _clean(samples, name)
    stat = ks_statistic_one_sample(x, reference.cdf)
    p = float(special.kolmogorov(math.sqrt(x.size) * stat))
    meta = {"reference": reference.describe()}
    meta.update(metadata or {})
    return TestReport(name, stat, p, x.size, 0, threshold, p > threshold, meta)


def ks_two_sample(a, b, name: str = "ks_two_sample", threshold: float = 0.01, metadata=None) -> TestReport:
    """Two-sided two-sample KS test with the asymptotic p-value."""
    xa = _clean(a, name)
    xb = _clean(b, name)
    stat = ks_statistic_two_sample(xa, xb)
    eff = xa.size * xb.size / (xa.size + xb.size)
    p = float(special.kolmogorov(math.sqrt(eff) * stat))
    return TestReport(name, stat, p, xa.size, xb.size, threshold, p > threshold, dict(metadata or {}))


# intervals and simple tests


def normal_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


def wilson_ci(successes: int, n: int, confidence: float = 0.99) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise TooFewSamples("need at least one trial")
    z = normal_quantile(0.5 + confidence / 2.0)
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lower = 0.0 if successes == 0 else max(0.0, center - half)
    upper = 1.0 if successes == n else min(1.0, center + half)
    return lower, upper


def mean_ci(samples, confidence: float = 0.99) -> tuple[float, float, float]:
    """``(mean, lower, upper)`` normal-approximation interval."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise TooFewSamples("need at least two samples")
    m = float(x.mean())
    se = float(x.std(ddof=1)) / math.sqrt(x.size)
    z = normal_quantile(0.5 + confidence / 2.0)
    return m, m - z * se, m + z * se


def z_test_mean(samples, target: float) -> tuple[float, float]:
    """``(z, two-sided p)`` for ``mean == target``; ``p = 1`` for constant samples at the target."""
    x = np.asarray(samples, dtype=np.float64)
    se = float(x.std(ddof=1)) / math.sqrt(x.size)
    diff = float(x.mean()) - target
    if se == 0.0:
        return (0.0, 1.0) if abs(diff) <= 1e-12 * max(1.0, abs(target)) else (math.inf, 0.0)
    z = diff / se
    return z, float(special.erfc(abs(z) / math.sqrt(2.0)))


def variance_with_se(samples) -> tuple[float, float]:
    """Sample variance and its large-sample standard error."""
    x = np.asarray(samples, dtype=np.float64)
    c = x - x.mean()
    var = float(np.mean(c * c)) * x.size / (x.size - 1)
    m4 = float(np.mean(c**4))
    return var, math.sqrt(max(m4 - var * var, 0.0) / x.size)


def two_proportion_test(k1: int, n1: int, k2: int, n2: int) -> tuple[float, float]:
    """Pooled two-proportion z-test: ``(z, two-sided p)``."""
    pooled = (k1 + k2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    if se == 0.0:
        return 0.0, 1.0
    z = (k1 / n1 - k2 / n2) / se
    return z, float(special.erfc(abs(z) / math.sqrt(2.0)))


def bonferroni_suite(name: str, reports: Sequence[TestReport], alpha: float = 0.01, metadata=None) -> TestReport:
    """Collapse component tests into one family-wise verdict.

    Passes iff every component p-value exceeds ``alpha / m``; the reported
    statistic is the largest component statistic and the p-value the smallest.
    """
    if not reports:
        raise ValueError("no component tests")
    thr = bonferroni(alpha, len(reports))
    p_min = min(r.p_value for r in reports)
    meta = {
        "criterion": "bonferroni",
        "alpha": alpha,
        "tests": len(reports),
        "components": [{"name": r.name, "statistic": r.statistic, "p_value": r.p_value} for r in reports],
    }
    meta.update(metadata or {})
    return TestReport(
        name,
        max(r.statistic for r in reports),
        p_min,
        reports[0].n1,
        reports[0].n2,
        thr,
        p_min > thr,
        meta,
    )
