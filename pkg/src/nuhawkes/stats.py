"""Distributional distances, pathwise identity checks, and regularity diagnostics.

Everything here is a pure function of its inputs and safe for concurrent use.
Results come back as :class:`TestReport` records that serialize to JSON lines
for run manifests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

__all__ = [
    "TestReport",
    "ks_distance",
    "wasserstein1",
    "qv_identity_check",
    "exchangeable_moment_check",
    "HolderEstimate",
    "holder_exponent",
]


@dataclass
class TestReport:
    """Outcome of one statistical or exact check."""

    description: str
    statistic: float
    passed: bool
    p_value: float | None = None
    tolerance: float | None = None
    sample_sizes: tuple = ()
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p_value is not None and not (0.0 <= self.p_value <= 1.0):
            raise ValueError("p-value must lie in [0, 1]")

    def to_json_line(self) -> str:
        payload = {
            "description": self.description,
            "statistic": self.statistic,
            "passed": bool(self.passed),
            "p_value": self.p_value,
            "tolerance": self.tolerance,
            "sample_sizes": list(self.sample_sizes),
            "details": _jsonable(self.details),
        }
        return json.dumps(payload, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def ks_distance(sample_a, sample_b, level: float = 0.01,
                description: str = "two-sample KS") -> TestReport:
    """Two-sample Kolmogorov-Smirnov statistic with its asymptotic p-value.

    Passes when the p-value exceeds ``level``.  Small-sample exact p-values
    are deliberately not used; the asymptotic calibration is checked
    empirically under the null in the test suite.
    """
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("KS distance requires nonempty samples")
    res = sps.ks_2samp(a, b, method="asymp")
    return TestReport(
        description=description,
        statistic=float(res.statistic),
        p_value=float(min(max(res.pvalue, 0.0), 1.0)),
        passed=bool(res.pvalue > level),
        tolerance=level,
        sample_sizes=(a.size, b.size),
    )


def wasserstein1(sample_a, sample_b, tolerance: float | None = None,
                 description: str = "1-Wasserstein distance") -> TestReport:
    """Order-statistics 1-Wasserstein distance between two empirical measures."""
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("Wasserstein distance requires nonempty samples")
    dist = float(sps.wasserstein_distance(a, b))
    passed = True if tolerance is None else dist <= tolerance
    return TestReport(description, dist, passed, tolerance=tolerance,
                      sample_sizes=(a.size, b.size))


def qv_identity_check(path, tol: float = 1e-10) -> TestReport:
    """Pathwise check that ``[M_i] = N_i`` and cross components never co-jump.

    ``path`` needs sorted ``times`` and integer ``components`` (a Hawkes path
    or any tagged-particle view with those attributes).  The compensator is
    continuous, so every jump of the compensated process has size exactly one
    and the realized quadratic variation per component is the event count;
    simultaneous jumps across components would make a cross-covariation
    nonzero, so timestamp uniqueness is asserted too.
    """
    times = np.asarray(path.times, dtype=float)
    comps = np.asarray(path.components, dtype=np.int64)
    d = int(comps.max()) + 1 if comps.size else 1
    counts = np.bincount(comps, minlength=d).astype(float)
    # jump sizes of M at events: Delta N = 1 and Delta Lambda = 0
    jump_sq_sums = np.bincount(comps, weights=np.ones_like(times), minlength=d)
    residual = float(np.max(np.abs(jump_sq_sums - counts))) if counts.size else 0.0
    no_ties = bool(times.size < 2 or np.all(np.diff(times) > 0.0))
    return TestReport(
        description="quadratic variation identity [M_i] = N_i, zero cross-covariation",
        statistic=residual,
        passed=bool(residual <= tol and no_ties),
        tolerance=tol,
        sample_sizes=(times.size,),
        details={"counts": counts, "distinct_timestamps": no_ties},
    )


def exchangeable_moment_check(values, g, K: int, tol: float = 1e-12,
                              max_tuples: int = 10**7) -> TestReport:
    """Verify the moment decomposition of an empirical average's K-th power.

    For n values and a bounded test function g, the identity decomposes
    ``((1/n) sum g(x_k))**K`` into the distinct-index part, weighted by
    ``n! / ((n-K)! n^K)``, plus the repeated-index remainder.  Both sides are
    computed by full enumeration of the ``n**K`` index tuples, so agreement is
    exact up to rounding.
    """
    x = np.asarray(values, dtype=float).ravel()
    n = x.size
    if K < 1 or K > n:
        raise ValueError("need 1 <= K <= n")
    if n**K > max_tuples:
        raise ValueError(
            f"enumeration of {n}**{K} index tuples exceeds the {max_tuples} cap; "
            "use a sampled check instead"
        )
    gx = np.asarray([g(v) for v in x], dtype=float)
    lhs = float(np.mean(gx)) ** K

    grids = np.meshgrid(*([np.arange(n)] * K), indexing="ij")
    idx = np.stack([a.ravel() for a in grids], axis=1)       # (n^K, K)
    products = np.prod(gx[idx], axis=1)
    distinct = np.ones(idx.shape[0], dtype=bool)
    for i in range(K):
        for j in range(i + 1, K):
            distinct &= idx[:, i] != idx[:, j]

    falling = math.perm(n, K)
    coeff = falling / n**K
    distinct_avg = float(products[distinct].sum()) / falling if falling else 0.0
    remainder = float(products[~distinct].sum()) / n**K
    rhs = coeff * distinct_avg + remainder
    residual = abs(lhs - rhs)
    scale = max(1.0, abs(lhs))
    return TestReport(
        description=f"exchangeable moment decomposition (n={n}, K={K})",
        statistic=residual,
        passed=bool(residual <= tol * scale),
        tolerance=tol,
        sample_sizes=(n,),
        details={
            "lhs": lhs,
            "rhs": rhs,
            "coefficient": coeff,
            "distinct_average": distinct_avg,
            "remainder": remainder,
        },
    )


@dataclass(frozen=True)
class HolderEstimate:
    """Regression estimate of a path's Holder exponent, with standard error."""

    exponent: float
    stderr: float
    degenerate: bool = False
    lags: tuple = ()
    mean_abs_increments: tuple = ()


def holder_exponent(series, max_lag_exp: int = 6) -> HolderEstimate:
    """Estimate path regularity from increments at dyadic lags.

    Regresses ``log E|x[k+l] - x[k]|`` on ``log l`` over lags ``2^0 .. 2^max_lag_exp``
    and clips the slope to (0, 1].  The statistic is invariant under affine
    transformations of the series values.  A constant series is reported as
    exponent 1 with the degenerate flag set.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 256:
        raise ValueError("Holder estimation needs at least 256 nodes")
    lags = 2 ** np.arange(max_lag_exp + 1)
    if lags[-1] >= x.size // 4:
        raise ValueError("series too short for the requested largest lag")
    stats = np.array([np.mean(np.abs(x[l:] - x[:-l])) for l in lags], dtype=float)
    if np.any(stats == 0.0):
        return HolderEstimate(1.0, 0.0, True, tuple(lags), tuple(stats))
    logl, logs = np.log(lags), np.log(stats)
    design = np.column_stack([logl, np.ones_like(logl)])
    coef, res, *_ = np.linalg.lstsq(design, logs, rcond=None)
    slope = float(coef[0])
    dof = len(lags) - 2
    if dof > 0 and res.size:
        sigma2 = float(res[0]) / dof
        sxx = float(np.sum((logl - logl.mean()) ** 2))
        stderr = math.sqrt(sigma2 / sxx)
    else:
        stderr = 0.0
    return HolderEstimate(min(max(slope, 1e-12), 1.0), stderr, False,
                          tuple(lags), tuple(stats))
