"""Jump signals in the drift direction.

For an increment-stationary, nondecreasing, continuous process ``X`` one has
``n P(X(1/n) - X(0) > eps) -> 0``.  The gap ``F^lambda(y) - F^0(y)`` keeps
``P(gap > eps) / lambda`` bounded away from 0 as ``lambda -> 0``, which is the
observable footprint of jumps.  A scan over finitely many ``lambda`` cannot see
a liminf, so :func:`jump_rate_scan` uses an explicit operational criterion
recorded in its result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kpzh import DEFAULT_STEP, increment_gap_rows, kpzh_values
from .paths import Grid, RngStream, make_grid
from .stats import TestReport, bonferroni, normal_quantile, two_proportion_test, wilson_ci

MIN_JUMP_REPS = 10_000
CONFIDENCE = 0.99
PROCESSES = ("kpzh", "control")
SCAN_CRITERION = (
    "smallest-lambda rate has a 99% Wilson lower bound above 0, and its upper bound "
    "is at least half the largest-lambda rate"
)


def lambda_gamma(lam: float) -> float:
    """``lambda * Gamma(lambda) = Gamma(1 + lambda)``, which tends to 1 as ``lambda -> 0``."""
    return math.exp(math.lgamma(1.0 + lam))


def _check_positive(**params) -> None:
    for key, val in params.items():
        if not val > 0:
            raise ValueError(f"{key} must be positive, got {val!r}")


def _wilson(successes: int, n: int) -> tuple[float, tuple[float, float]]:
    return successes / n, wilson_ci(successes, n, CONFIDENCE)


def jump_prob(
    lam: float,
    beta: float,
    y: float,
    epsilon: float,
    reps: int,
    rng: RngStream,
    step: float = DEFAULT_STEP,
    threads: int | None = None,
) -> tuple[float, tuple[float, float]]:
    """Estimate of ``P(gap(y) > epsilon)`` for drift gap ``lam`` with a 99% Wilson interval.

    ``y = 0`` gives an identically zero gap.
    """
    _check_positive(lam=lam, beta=beta, epsilon=epsilon)
    if y < 0:
        raise ValueError("y must be nonnegative")
    if reps < MIN_JUMP_REPS:
        raise ValueError(f"reps must be at least {MIN_JUMP_REPS}")
    gaps = increment_gap_rows(lam, beta, y, reps, rng, step, threads=threads)
    return _wilson(int(np.count_nonzero(gaps > epsilon)), reps)


def control_jump_prob(lam: float, y: float, epsilon: float) -> float:
    """Jump probability of the continuous control ``X(lambda) = lambda y``."""
    return 1.0 if lam * y > epsilon else 0.0


@dataclass(frozen=True)
class JumpScanResult:
    lambda_values: tuple
    probs: tuple
    rates: tuple
    ci_half_widths: tuple
    rate_lower: tuple
    rate_upper: tuple
    passed: bool
    process: str = "kpzh"
    metadata: dict = field(default_factory=dict)

    def to_report(self, name: str = "jump_rate_scan") -> TestReport:
        smallest_lower = self.rate_lower[-1]
        meta = {
            "criterion": SCAN_CRITERION,
            "process": self.process,
            "lambda_values": list(self.lambda_values),
            "probs": list(self.probs),
            "rates": list(self.rates),
            "rate_lower": list(self.rate_lower),
            "rate_upper": list(self.rate_upper),
        }
        meta.update(self.metadata)
        return TestReport(name, self.rates[-1], float("nan"), self.metadata.get("reps", 0), 0, 0.0, self.passed, meta)


def _scan_verdict(rates, lower, upper) -> bool:
    return lower[-1] > 0.0 and upper[-1] >= 0.5 * rates[0]


def jump_rate_scan(
    lambdas: Sequence[float],
    beta: float,
    y: float,
    epsilon: float,
    reps: int,
    rng: RngStream,
    process: str = "kpzh",
    step: float = DEFAULT_STEP,
    threads: int | None = None,
) -> JumpScanResult:
    """Rates ``P(gap > epsilon) / lambda`` along decreasing ``lambdas``.

    ``process="control"`` scans the deterministic continuous control instead
    (no sampling; its rates vanish once ``lambda y < epsilon``).
    """
    lams = [float(v) for v in lambdas]
    if not lams or any(v <= 0 for v in lams) or any(b >= a for a, b in zip(lams, lams[1:])):
        raise ValueError("lambdas must be positive and strictly decreasing")
    if process not in PROCESSES:
        raise ValueError(f"process must be one of {PROCESSES}")
    probs, halves, lower, upper = [], [], [], []
    for i, lam in enumerate(lams):
        if process == "control":
            p = control_jump_prob(lam, y, epsilon)
            lo, hi = p, p
        else:
            p, (lo, hi) = jump_prob(lam, beta, y, epsilon, reps, rng.child(i), step, threads)
        probs.append(p)
        halves.append(0.5 * (hi - lo))
        lower.append(lo / lam)
        upper.append(hi / lam)
    rates = [p / lam for p, lam in zip(probs, lams)]
    meta = {
        "beta": beta,
        "y": y,
        "epsilon": epsilon,
        "reps": reps if process == "kpzh" else 0,
        "confidence": CONFIDENCE,
        "lambda_gamma_smallest": lambda_gamma(lams[-1]),
        "seed": rng.seed,
        "stream_id": rng.stream_id,
    }
    return JumpScanResult(
        tuple(lams),
        tuple(probs),
        tuple(rates),
        tuple(halves),
        tuple(lower),
        tuple(upper),
        _scan_verdict(rates, lower, upper),
        process,
        meta,
    )


def epsilon_monotonicity_check(
    lam: float,
    beta: float,
    y: float,
    epsilons: Sequence[float],
    reps: int,
    rng: RngStream,
    alpha: float = 0.01,
    step: float = DEFAULT_STEP,
    threads: int | None = None,
) -> TestReport:
    """Independent estimates along increasing ``epsilons`` must not rise significantly.

    Each consecutive pair gets a one-sided two-proportion test, Bonferroni-corrected.
    """
    eps = [float(e) for e in epsilons]
    if len(eps) < 2 or any(b <= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly increasing with at least two values")
    counts = []
    for i, e in enumerate(eps):
        p, _ = jump_prob(lam, beta, y, e, reps, rng.child(i), step, threads)
        counts.append(int(round(p * reps)))
    z_crit = normal_quantile(1.0 - bonferroni(alpha, len(eps) - 1))
    rises = []
    for a, b in zip(counts, counts[1:]):
        z, _ = two_proportion_test(b, reps, a, reps)
        rises.append(z)
    worst = max(rises)
    return TestReport(
        "epsilon_monotonicity",
        worst,
        float("nan"),
        reps,
        reps,
        z_crit,
        worst <= z_crit,
        {
            "criterion": "no one-sided significant increase between consecutive epsilons",
            "epsilons": eps,
            "probs": [c / reps for c in counts],
            "lambda": lam,
            "beta": beta,
            "y": y,
            "seed": rng.seed,
            "stream_id": rng.stream_id,
        },
    )


def stationarity_transfer_check(
    lam: float,
    beta: float,
    y: float,
    epsilon: float,
    reps: int,
    rng: RngStream,
    base_drifts: tuple[float, float] = (0.0, 3.0),
    grid: Grid | None = None,
    alpha: float = 0.01,
    threads: int | None = None,
) -> TestReport:
    """Jump frequency of the coupled gap for drift pairs ``(b, b + lam)`` at two bases."""
    _check_positive(lam=lam, beta=beta, epsilon=epsilon)
    grid = grid or make_grid(-32.0, 2.0, 2.0**-9)
    counts = []
    for i, base in enumerate(base_drifts):
        vals = kpzh_values((base, base + lam), beta, grid, [y], reps, rng.child(i), threads=threads)
        gaps = vals[:, 1, 0] - vals[:, 0, 0]
        counts.append(int(np.count_nonzero(gaps > epsilon)))
    z, p = two_proportion_test(counts[0], reps, counts[1], reps)
    return TestReport(
        "jump_stationarity_transfer",
        z,
        p,
        reps,
        reps,
        alpha,
        p > alpha,
        {
            "criterion": "two-proportion z-test",
            "lambda": lam,
            "beta": beta,
            "y": y,
            "epsilon": epsilon,
            "base_drifts": list(base_drifts),
            "probs": [c / reps for c in counts],
            "grid": [grid.x_min, grid.x_max, grid.step],
            "seed": rng.seed,
            "stream_id": rng.stream_id,
        },
    )
