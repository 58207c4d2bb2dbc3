"""Limit diffusions: square-root processes, Volterra solvers, and regime samplers.

The scaling limit of a nearly unstable intensity is an affine Volterra
diffusion ``Y(t) = F(t) a + int_0^t f(t-s) sqrt(diag Y(s)) dB(s)`` driven by a
kernel pair ``(f, F)`` that is the limit of the scaled resolvent measures.
Light-tailed families give the exponential-type pair, equivalent to a CIR
process; heavy-tailed families give the fractional pair with an integrable
singularity at the origin.

Tagged particles of the mean-field system converge, given the aggregate limit
``Xbar``, to one of three regimes indexed by ``zeta = lim n beta_n^2``:
synchronization (``zeta = 0``), conditionally independent Poisson time changes
(``0 < zeta < inf``), or extinction (``zeta = inf``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .grids import Grid
from .kernels import BernsteinTriplet
from .rng import stream, substream_seed

__all__ = [
    "CIRParams",
    "CIRPath",
    "solve_cir",
    "ensemble_cir",
    "cir_correspondence",
    "LimitKernelSpec",
    "SVEPath",
    "solve_sve",
    "ensemble_sve",
    "RegimeLimitSample",
    "sample_regime_limit",
    "EmpiricalMeasureSnapshot",
    "limit_empirical_law",
    "sve_to_csv",
]


# ---------------------------------------------------------------------------
# CIR


@dataclass(frozen=True)
class CIRParams:
    """Square-root diffusion ``dxi = b (a - xi) dt + sigma sqrt(xi) dB``."""

    b: float
    a: float
    sigma: float
    xi0: float = 0.0

    def __post_init__(self):
        if min(self.b, self.a, self.sigma, self.xi0) < 0:
            raise ValueError("CIR parameters must be nonnegative")

    def mean_at(self, t):
        """E[xi(t)] from the first-moment ODE."""
        return self.a + (self.xi0 - self.a) * np.exp(-self.b * np.asarray(t))

    def variance_at(self, t):
        """Var[xi(t)] by solving the second-moment ODE in closed form."""
        t = np.asarray(t, dtype=float)
        if self.b == 0:
            # driftless case: Var' = sigma^2 * E[xi] with constant mean xi0
            return self.sigma**2 * self.xi0 * t
        e = np.exp(-self.b * t)
        return (self.sigma**2 / self.b) * (
            self.xi0 * (e - e**2) + 0.5 * self.a * (1.0 - e) ** 2
        )


@dataclass(frozen=True)
class CIRPath:
    grid: Grid
    values: np.ndarray        # (m+1,), truncated at zero
    d_brownian: np.ndarray    # (m,)


def _cir_recursion(params: CIRParams, h: float, d_brownian: np.ndarray) -> np.ndarray:
    """Full-truncation Euler: the raw state may dip below zero, the reported
    and root-evaluated value is its positive part."""
    m = d_brownian.shape[-1]
    raw = np.empty(d_brownian.shape[:-1] + (m + 1,))
    raw[..., 0] = params.xi0
    for k in range(m):
        pos = np.maximum(raw[..., k], 0.0)
        raw[..., k + 1] = (
            raw[..., k]
            + params.b * (params.a - pos) * h
            + params.sigma * np.sqrt(pos) * d_brownian[..., k]
        )
    return np.maximum(raw, 0.0)


def solve_cir(params: CIRParams, grid: Grid, rng_seed) -> CIRPath:
    """One Euler path of the square-root diffusion on the grid."""
    if params.b * grid.h >= 1.0:
        warnings.warn("b*h >= 1: the Euler step undersamples the mean reversion",
                      stacklevel=2)
    rng = stream(rng_seed)
    dB = rng.standard_normal(grid.m) * math.sqrt(grid.h)
    return CIRPath(grid, _cir_recursion(params, grid.h, dB), dB)


def ensemble_cir(params: CIRParams, grid: Grid, seed: int, n_paths: int) -> np.ndarray:
    """Matrix of truncated CIR paths, shape (n_paths, m+1).

    Row i consumes the same sub-stream as ``solve_cir`` with
    ``substream_seed(seed, "path", i)``, so ensembles are reproducible
    path-for-path; the recursion itself is vectorized across rows.
    """
    dB = np.empty((n_paths, grid.m))
    for i in range(n_paths):
        dB[i] = stream(substream_seed(seed, "path", i)).standard_normal(grid.m)
    dB *= math.sqrt(grid.h)
    return _cir_recursion(params, grid.h, dB)


def cir_correspondence(triplet: BernsteinTriplet, target_a: float) -> CIRParams:
    """CIR parameters matching the exponential-type limit pair of an affine triplet.

    For ``Phi(z) = m + lam z`` the limit kernel pair is
    ``f(t) = exp(-m t / lam) / lam``, ``F(t) = (1 - exp(-m t / lam)) / m``,
    and the Volterra solution solves the CIR equation with reversion speed
    ``m / lam``, level ``target_a / m`` and volatility ``1 / lam``.
    """
    if triplet.atoms.size:
        raise ValueError("correspondence requires a drift-plus-linear triplet")
    m, lam = triplet.drift, triplet.linear
    if m <= 0 or lam <= 0:
        raise ValueError("correspondence requires positive drift and linear parts")
    return CIRParams(b=m / lam, a=target_a / m, sigma=1.0 / lam, xi0=0.0)


# ---------------------------------------------------------------------------
# limit kernel pairs (f, F)


@dataclass(frozen=True)
class LimitKernelSpec:
    """Tabulated limit kernel pair: density cells and distribution nodes.

    ``density_cells[k]`` is the exact cell average of ``f`` over cell k and
    ``distribution_nodes[k]`` the value of ``F`` at node k, shapes
    ``(m, d, d)`` and ``(m+1, d, d)``.  Cell averaging keeps integrable
    origin singularities (the fractional kernel) exact.
    """

    grid: Grid
    density_cells: np.ndarray
    distribution_nodes: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.density_cells, dtype=float)
        F = np.asarray(self.distribution_nodes, dtype=float)
        if f.ndim == 1:
            f = f[:, None, None]
        if F.ndim == 1:
            F = F[:, None, None]
        if np.any(f < -1e-14):
            raise ValueError("limit kernel density must be nonnegative")
        if np.any(np.diff(F, axis=0) < -1e-12):
            raise ValueError("limit distribution must be nondecreasing")
        gap = np.max(np.abs(F[1:] - F[:-1] - self.grid.h * f))
        if gap > 1e-6 * max(1.0, float(np.max(np.abs(f)))):
            raise ValueError("distribution must integrate the density on the grid")
        for arr in (f, F):
            arr.flags.writeable = False
        object.__setattr__(self, "density_cells", f)
        object.__setattr__(self, "distribution_nodes", F)

    @property
    def dimension(self) -> int:
        return self.density_cells.shape[1]

    @classmethod
    def from_triplet(cls, triplet: BernsteinTriplet, grid: Grid) -> "LimitKernelSpec":
        """Exponential-type pair of an affine triplet ``Phi(z) = m + lam z``.

        ``f(t) = exp(-m t / lam) / lam`` and ``F(t) = (1 - e^{-m t/lam}) / m``
        (or ``t / lam`` when m = 0).  Triplets with a jump part have no closed
        inverse here; feed those through a scaled resolvent table instead.
        """
        if triplet.atoms.size:
            raise ValueError(
                "no closed-form inversion for triplets with a jump part; "
                "use from_resolvent_table on a nearly unstable family instead"
            )
        m, lam = triplet.drift, triplet.linear
        if lam <= 0:
            raise ValueError("need a positive linear coefficient")
        nodes = grid.nodes()
        if m == 0:
            F = nodes / lam
        else:
            F = (1.0 - np.exp(-m * nodes / lam)) / m
        cells = (F[1:] - F[:-1]) / grid.h
        return cls(grid, cells, F, {"form": "exponential-type", "m": m, "lambda": lam})

    @classmethod
    def fractional(cls, alpha: float, grid: Grid,
                   normalization: str | float = "gamma-complement") -> "LimitKernelSpec":
        """Fractional pair ``f(t) = t^{alpha-1} / G`` with exact singular cells.

        ``normalization`` picks the constant G: ``"gamma-complement"`` uses
        Gamma(1 - alpha), ``"gamma"`` uses Gamma(alpha), and a float is used
        as G directly.  The choice only rescales the pair; the default is the
        complement convention.
        """
        if not (0.5 < alpha < 1.0):
            raise ValueError("fractional exponent must lie in (1/2, 1)")
        if normalization == "gamma-complement":
            g = special.gamma(1.0 - alpha)
        elif normalization == "gamma":
            g = special.gamma(alpha)
        else:
            g = float(normalization)
        nodes = grid.nodes()
        F = nodes**alpha / (alpha * g)
        cells = (F[1:] - F[:-1]) / grid.h
        return cls(grid, cells, F,
                   {"form": "fractional", "alpha": alpha, "normalization": str(normalization)})

    @classmethod
    def from_resolvent_table(cls, table) -> "LimitKernelSpec":
        """Use a scaled resolvent table ``(f_n, F_n)`` as the kernel pair."""
        if table.f_n is None or table.F_n is None:
            raise ValueError("table has no scaled measure; build it via scaled_resolvent_measure")
        return cls(table.grid, table.f_n, table.F_n,
                   {"form": "resolvent-table", "beta_n": table.beta_n})


# ---------------------------------------------------------------------------
# stochastic Volterra solver


@dataclass(frozen=True)
class SVEPath:
    """Solution triple on the grid: rate Y, integrated X, martingale Z."""

    grid: Grid
    Y: np.ndarray             # (m+1, d)
    X: np.ndarray             # (m+1, d), nondecreasing
    Z: np.ndarray             # (m+1, d)
    d_brownian: np.ndarray    # (m, d)


def _sve_recursion(spec: LimitKernelSpec, a: np.ndarray, dB: np.ndarray):
    grid = spec.grid
    m, d = grid.m, spec.dimension
    fbar = spec.density_cells
    F = spec.distribution_nodes
    Y = np.empty((m + 1, d))
    S = np.empty((m, d))  # sqrt(diag Y+) dB per cell
    Y[0] = F[0] @ a
    Z = np.zeros((m + 1, d))
    for k in range(m):
        S[k] = np.sqrt(np.maximum(Y[k], 0.0)) * dB[k]
        Z[k + 1] = Z[k] + S[k]
        if d == 1:
            conv = np.dot(fbar[k::-1, 0, 0], S[: k + 1, 0])
            Y[k + 1, 0] = F[k + 1, 0, 0] * a[0] + conv
        else:
            conv = np.einsum("jab,jb->a", fbar[k::-1], S[: k + 1])
            Y[k + 1] = F[k + 1] @ a + conv
    Ypos = np.maximum(Y, 0.0)
    X = np.zeros((m + 1, d))
    np.cumsum(0.5 * grid.h * (Ypos[1:] + Ypos[:-1]), axis=0, out=X[1:])
    return Y, X, Z


def solve_sve(spec: LimitKernelSpec, a, grid: Grid, rng_seed) -> SVEPath:
    """Truncated Volterra Euler scheme for ``Y = F a + f * (sqrt(diag Y) dB)``.

    The square root is applied to the positive part of the left node value, X
    integrates the positive part by trapezoid (hence is nondecreasing path by
    path), and Z accumulates the martingale increments.  ``grid`` must be the
    grid the kernel pair was tabulated on.
    """
    if grid != spec.grid:
        raise ValueError("kernel spec is tabulated on a different grid")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.size != spec.dimension:
        raise ValueError("initial mass vector must match the kernel dimension")
    rng = stream(rng_seed)
    dB = rng.standard_normal((grid.m, spec.dimension)) * math.sqrt(grid.h)
    Y, X, Z = _sve_recursion(spec, a, dB)
    return SVEPath(grid, Y, X, Z, dB)


def ensemble_sve(spec: LimitKernelSpec, a: float, seed: int, n_paths: int):
    """Univariate ensemble of the Volterra scheme, vectorized across paths.

    Returns ``(Y, X)`` with shape (n_paths, m+1) each.  Path i consumes the
    sub-stream ``substream_seed(seed, "path", i)`` exactly as
    :func:`solve_sve` would.
    """
    if spec.dimension != 1:
        raise ValueError("the vectorized ensemble supports d = 1 only")
    grid = spec.grid
    m = grid.m
    dB = np.empty((n_paths, m))
    for i in range(n_paths):
        dB[i] = stream(substream_seed(seed, "path", i)).standard_normal((m, 1))[:, 0]
    dB *= math.sqrt(grid.h)
    fbar = spec.density_cells[:, 0, 0]
    F = spec.distribution_nodes[:, 0, 0]
    Y = np.empty((n_paths, m + 1))
    S = np.empty((n_paths, m))
    Y[:, 0] = F[0] * a
    for k in range(m):
        S[:, k] = np.sqrt(np.maximum(Y[:, k], 0.0)) * dB[:, k]
        Y[:, k + 1] = F[k + 1] * a + S[:, : k + 1] @ fbar[k::-1]
    Ypos = np.maximum(Y, 0.0)
    X = np.zeros((n_paths, m + 1))
    np.cumsum(0.5 * grid.h * (Ypos[:, 1:] + Ypos[:, :-1]), axis=1, out=X[:, 1:])
    return Y, X


# ---------------------------------------------------------------------------
# regime limits for tagged particles


@dataclass(frozen=True)
class RegimeLimitSample:
    """Tagged-particle limits driven by a fixed aggregate path.

    ``zeta = 0``: every tagged X equals the aggregate and Z is an independent
    Brownian motion run on the clock Xbar.  ``0 < zeta < inf``: X is a
    Poisson process of rate ``1/zeta`` on that clock, scaled by zeta, and Z
    its compensated, sqrt(zeta)-scaled version.  ``zeta = inf``: everything
    is zero.
    """

    zeta: float
    xbar: SVEPath
    X: np.ndarray     # (K, m+1)
    Z: np.ndarray     # (K, m+1)


def sample_regime_limit(zeta: float, xbar: SVEPath, K: int, rng_seed) -> RegimeLimitSample:
    """Draw K tagged-particle limit paths given the aggregate ``xbar``.

    The time change is sampled exactly on the grid through the independent
    increments of the clock: Gaussian increments with variance ``dXbar`` for
    ``zeta = 0``, Poisson counts with mean ``dXbar / zeta`` otherwise.
    """
    if xbar.Y.shape[1] != 1:
        raise ValueError("tagged-particle limits are univariate")
    if zeta < 0:
        raise ValueError("zeta must be nonnegative (may be inf)")
    if K < 0:
        raise ValueError("K must be nonnegative")
    clock = xbar.X[:, 0]
    if np.any(np.diff(clock) < 0):
        raise ValueError("aggregate clock must be nondecreasing")
    m1 = clock.size
    rng = stream(rng_seed)
    if np.isinf(zeta):
        zero = np.zeros((K, m1))
        return RegimeLimitSample(zeta, xbar, zero, zero.copy())
    d_clock = np.diff(clock)
    if zeta == 0.0:
        X = np.broadcast_to(clock, (K, m1)).copy()
        incr = np.sqrt(d_clock)[None, :] * rng.standard_normal((K, m1 - 1))
        Z = np.zeros((K, m1))
        np.cumsum(incr, axis=1, out=Z[:, 1:])
        return RegimeLimitSample(zeta, xbar, X, Z)
    counts = rng.poisson(d_clock[None, :] / zeta, size=(K, m1 - 1))
    N = np.zeros((K, m1))
    np.cumsum(counts, axis=1, out=N[:, 1:])
    X = zeta * N
    Z = math.sqrt(zeta) * (N - clock[None, :] / zeta)
    return RegimeLimitSample(float(zeta), xbar, X, Z)


# ---------------------------------------------------------------------------
# empirical measures


@dataclass(frozen=True)
class EmpiricalMeasureSnapshot:
    """Weighted sample of (count, martingale) values at one time point."""

    time: float
    values: np.ndarray    # (k,) or (k, 2)
    weights: np.ndarray   # (k,), nonnegative, sums to 1
    source: str = "limit"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to one")
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    def marginal(self, axis: int) -> np.ndarray:
        v = np.atleast_2d(self.values)
        return v[:, axis] if v.shape[1] > 1 else v[:, 0]


def limit_empirical_law(zeta: float, xbar: SVEPath, t: float, m_samples: int,
                        rng_seed) -> EmpiricalMeasureSnapshot:
    """Sample the limiting empirical law of (X_i(t), Z_i(t)) given the aggregate.

    ``zeta = 0``: the count marginal is the single atom Xbar(t) while the
    martingale marginal is Gaussian with variance Xbar(t).  Finite zeta: joint
    draws of the scaled Poisson pair at clock time Xbar(t)/zeta.  Infinite
    zeta: the point mass at (0, 0).
    """
    nodes = xbar.grid.nodes()
    if t < 0 or t > nodes[-1] + 1e-12:
        raise ValueError("time must lie within the aggregate grid")
    x_t = float(np.interp(t, nodes, xbar.X[:, 0]))
    rng = stream(rng_seed)
    if np.isinf(zeta):
        return EmpiricalMeasureSnapshot(t, np.zeros((1, 2)), np.ones(1), "limit")
    if zeta == 0.0:
        z = rng.standard_normal(m_samples) * math.sqrt(x_t)
        values = np.column_stack([np.full(m_samples, x_t), z])
        return EmpiricalMeasureSnapshot(t, values, np.full(m_samples, 1.0 / m_samples), "limit")
    if zeta < 0:
        raise ValueError("zeta must be nonnegative")
    counts = rng.poisson(x_t / zeta, size=m_samples)
    values = np.column_stack([
        zeta * counts,
        math.sqrt(zeta) * (counts - x_t / zeta),
    ])
    return EmpiricalMeasureSnapshot(t, values, np.full(m_samples, 1.0 / m_samples), "limit")


def sve_to_csv(path: SVEPath, filename) -> None:
    """Node series as CSV: ``t, Y_i, X_i, Z_i`` per component."""
    d = path.Y.shape[1]
    header = ["t"]
    for name in ("Y", "X", "Z"):
        header += [f"{name}_{i+1}" for i in range(d)]
    with open(filename, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for k, t in enumerate(path.grid.nodes()):
            row = [t, *path.Y[k], *path.X[k], *path.Z[k]]
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
