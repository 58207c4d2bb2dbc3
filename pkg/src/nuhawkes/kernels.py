"""Self-exciting kernels, nearly unstable kernel families, and Bernstein functions.

A kernel is the matrix-valued excitation profile of a linear self-exciting
point process: entry ``(i, j)`` at lag ``t`` is the intensity added to
component ``i`` by an event of component ``j`` that happened ``t`` time units
ago.  Three representations are supported:

* ``ExponentialKernel``  -- ``alpha_ij * exp(-beta_ij * t)``
* ``PowerLawKernel``     -- ``scale_ij * (t + cutoff) ** (-1 - exponent)``
* ``GridSampledKernel``  -- piecewise-constant cell values on a uniform grid

All forms expose exact L1 masses, Laplace transforms, running integrals, and
per-cell averages; the resolvent and simulation modules build on those.
Instances are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import mpmath
import numpy as np

from .grids import Grid

__all__ = [
    "KernelDomainError",
    "Kernel",
    "ExponentialKernel",
    "PowerLawKernel",
    "GridSampledKernel",
    "zero_kernel",
    "StabilityReport",
    "spectral_radius",
    "l1_and_stability",
    "NearlyUnstableFamily",
    "make_jr_family",
    "BernsteinTriplet",
    "bernstein_eval",
    "fourier_bound_report",
    "kernel_to_spec",
    "kernel_from_spec",
]


class KernelDomainError(ValueError):
    """Raised when a kernel is evaluated or integrated outside its domain."""


def _as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("kernel parameter matrices must be square")
    return a


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _check_laplace_arg(z):
    if np.real(z) < 0:
        raise KernelDomainError("Laplace transform requires Re z >= 0")


class Kernel:
    """Interface shared by all kernel representations."""

    dimension: int

    @property
    def is_nonincreasing(self) -> bool:
        """True when every entry is nonincreasing in t (thinning majorants rely on it)."""
        return True

    def eval(self, t: float) -> np.ndarray:
        """Kernel matrix at lag ``t >= 0``."""
        raise NotImplementedError

    def eval_lags(self, lags: np.ndarray) -> np.ndarray:
        """Vectorized evaluation, zero for negative lags; shape (len(lags), d, d)."""
        raise NotImplementedError

    def l1(self) -> np.ndarray:
        """Entrywise mass ``int_0^inf phi_ij``; the mean offspring matrix."""
        raise NotImplementedError

    def integral(self, t) -> np.ndarray:
        """Running integral ``int_0^t phi`` entrywise; accepts scalars or arrays."""
        raise NotImplementedError

    def laplace(self, z) -> np.ndarray:
        """Entrywise Laplace transform at ``z`` with ``Re z >= 0``."""
        raise NotImplementedError

    def cell_averages(self, grid: Grid) -> np.ndarray:
        """Exact per-cell mean values, shape (m, d, d); safe at integrable singularities."""
        edges = grid.nodes()
        ints = self.integral(edges)
        return (ints[1:] - ints[:-1]) / grid.h

    def scaled(self, amplitude: float, time_scale: float) -> "Kernel":
        """Kernel ``amplitude * time_scale * phi(time_scale * t)`` in the same family."""
        raise NotImplementedError

    def sample_displacement(self, i: int, j: int, size: int, rng) -> np.ndarray:
        """Draw offspring lags from the normalized density ``phi_ij / ||phi_ij||``."""
        raise NotImplementedError


@dataclass(frozen=True)
class ExponentialKernel(Kernel):
    """phi_ij(t) = alpha_ij * exp(-beta_ij * t); the zero kernel is alpha = 0."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = _as_matrix(self.alpha)
        b = _as_matrix(self.beta) if np.ndim(self.beta) else np.full_like(a, float(self.beta))
        if a.shape != b.shape:
            raise ValueError("alpha and beta must have the same shape")
        if np.any(a < 0):
            raise ValueError("alpha must be nonnegative entrywise")
        if np.any(b <= 0):
            raise ValueError("beta must be positive entrywise")
        object.__setattr__(self, "alpha", _freeze(a))
        object.__setattr__(self, "beta", _freeze(b))

    @property
    def dimension(self) -> int:
        return self.alpha.shape[0]

    def eval(self, t):
        if t < 0:
            raise KernelDomainError("kernel lag must be nonnegative")
        return self.alpha * np.exp(-self.beta * t)

    def eval_lags(self, lags):
        lags = np.asarray(lags, dtype=float)
        out = self.alpha * np.exp(-self.beta * np.maximum(lags, 0.0)[..., None, None])
        out[lags < 0] = 0.0
        return out

    def l1(self):
        return self.alpha / self.beta

    def integral(self, t):
        t = np.asarray(t, dtype=float)
        return (self.alpha / self.beta) * (-np.expm1(-self.beta * t[..., None, None]))

    def laplace(self, z):
        _check_laplace_arg(z)
        return self.alpha / (z + self.beta)

    def scaled(self, amplitude, time_scale):
        return ExponentialKernel(self.alpha * amplitude * time_scale, self.beta * time_scale)

    def sample_displacement(self, i, j, size, rng):
        return rng.exponential(1.0 / self.beta[i, j], size)


@dataclass(frozen=True)
class PowerLawKernel(Kernel):
    """phi_ij(t) = scale_ij * (t + cutoff) ** (-1 - exponent).

    The tail mass beyond T decays like T**(-exponent); the intended
    heavy-tail range is exponent in (1/2, 1).  A positive cutoff keeps the
    kernel integrable at the origin; with ``cutoff == 0`` the kernel is not
    integrable and every integral-type operation raises.

    Parameters
    ----------
    scale : array_like
        Nonnegative d x d amplitude matrix.
    exponent : float
        Tail decay exponent, shared across entries.
    cutoff : float
        Origin shift; must be positive for integrability.
    """

    scale: np.ndarray
    exponent: float
    cutoff: float

    def __post_init__(self):
        s = _as_matrix(self.scale)
        if np.any(s < 0):
            raise ValueError("scale must be nonnegative entrywise")
        if not (self.exponent > 0):
            raise ValueError("exponent must be positive")
        if self.cutoff < 0:
            raise ValueError("cutoff must be nonnegative")
        object.__setattr__(self, "scale", _freeze(s))

    @property
    def dimension(self) -> int:
        return self.scale.shape[0]

    def _require_integrable(self):
        if self.cutoff == 0:
            raise KernelDomainError(
                "power-law kernel without cutoff is not integrable on [0, inf)"
            )

    def eval(self, t):
        if t < 0:
            raise KernelDomainError("kernel lag must be nonnegative")
        if t + self.cutoff == 0:
            raise KernelDomainError("power-law kernel diverges at t = 0 without cutoff")
        return self.scale * (t + self.cutoff) ** (-1.0 - self.exponent)

    def eval_lags(self, lags):
        lags = np.asarray(lags, dtype=float)
        base = (np.maximum(lags, 0.0) + self.cutoff) ** (-1.0 - self.exponent)
        out = self.scale * base[..., None, None]
        out[lags < 0] = 0.0
        return out

    def l1(self):
        self._require_integrable()
        return self.scale / (self.exponent * self.cutoff**self.exponent)

    def integral(self, t):
        self._require_integrable()
        t = np.asarray(t, dtype=float)
        tails = (t[..., None, None] + self.cutoff) ** (-self.exponent)
        return (self.scale / self.exponent) * (self.cutoff**-self.exponent - tails)

    def laplace(self, z):
        _check_laplace_arg(z)
        self._require_integrable()
        if z == 0:
            return self.l1()
        # int_0^inf e^{-zt} (t+c)^{-1-a} dt = z^a e^{zc} Gamma(-a, zc); mpmath
        # keeps the e^{zc} * Gamma(-a, zc) product stable for large |z| c.
        zc = mpmath.mpc(complex(z))
        g = mpmath.gammainc(-self.exponent, zc * self.cutoff, mpmath.inf)
        factor = complex(zc**self.exponent * mpmath.exp(zc * self.cutoff) * g)
        if np.imag(np.asarray(z, dtype=complex)) == 0:
            factor = factor.real
        return self.scale * factor

    def scaled(self, amplitude, time_scale):
        return PowerLawKernel(
            self.scale * amplitude * time_scale ** (-self.exponent),
            self.exponent,
            self.cutoff / time_scale,
        )

    def sample_displacement(self, i, j, size, rng):
        self._require_integrable()
        u = rng.random(size)
        # inverse CDF of the Lomax density exponent*c^exponent*(t+c)^{-1-exponent}
        return self.cutoff * ((1.0 - u) ** (-1.0 / self.exponent) - 1.0)


@dataclass(frozen=True)
class GridSampledKernel(Kernel):
    """Piecewise-constant kernel: ``values[k]`` on cell ``[k*step, (k+1)*step)``.

    The kernel carries no mass beyond its grid horizon ``m * step``; the L1
    matrix is exactly the cell-integral sum.  Point evaluation past the
    horizon is an error, but integrals saturate there.
    """

    step: float
    values: np.ndarray

    def __post_init__(self):
        if not (self.step > 0):
            raise ValueError("grid step must be positive")
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None, None]
        if v.ndim != 3 or v.shape[1] != v.shape[2]:
            raise ValueError("values must have shape (m,) or (m, d, d)")
        if np.any(v < 0):
            raise ValueError("kernel cell values must be nonnegative")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return self.values.shape[0] * self.step

    @property
    def is_nonincreasing(self) -> bool:
        return bool(np.all(np.diff(self.values, axis=0) <= 1e-15))

    def eval(self, t):
        if t < 0:
            raise KernelDomainError("kernel lag must be nonnegative")
        if t >= self.horizon:
            raise KernelDomainError(
                f"lag {t} beyond grid horizon {self.horizon}"
            )
        return self.values[int(t / self.step)]

    def eval_lags(self, lags):
        lags = np.asarray(lags, dtype=float)
        idx = np.floor(lags / self.step).astype(int)
        valid = (lags >= 0) & (idx < self.values.shape[0])
        out = np.zeros(lags.shape + self.values.shape[1:])
        out[valid] = self.values[idx[valid]]
        return out

    def l1(self):
        return self.step * self.values.sum(axis=0)

    def _node_cumulative(self):
        m = self.values.shape[0]
        cum = np.zeros((m + 1,) + self.values.shape[1:])
        np.cumsum(self.values * self.step, axis=0, out=cum[1:])
        return cum

    def integral(self, t):
        t = np.asarray(t, dtype=float)
        nodes = np.arange(self.values.shape[0] + 1) * self.step
        cum = self._node_cumulative()
        flat = np.clip(t, 0.0, self.horizon).ravel()
        out = np.empty((flat.size,) + self.values.shape[1:])
        for a in range(self.dimension):
            for b in range(self.dimension):
                out[:, a, b] = np.interp(flat, nodes, cum[:, a, b])
        return out.reshape(t.shape + self.values.shape[1:])

    def laplace(self, z):
        if np.real(z) < 0:
            raise KernelDomainError("Laplace transform requires Re z >= 0")
        if z == 0:
            return self.l1()
        m = self.values.shape[0]
        edges = np.arange(m + 1) * self.step
        weights = (np.exp(-z * edges[:-1]) - np.exp(-z * edges[1:])) / z
        return np.tensordot(weights, self.values, axes=(0, 0))

    def scaled(self, amplitude, time_scale):
        return GridSampledKernel(self.step / time_scale, self.values * (amplitude * time_scale))

    def sample_displacement(self, i, j, size, rng):
        masses = self.values[:, i, j] * self.step
        total = masses.sum()
        if total <= 0:
            raise KernelDomainError("cannot sample displacements from a zero entry")
        cells = rng.choice(masses.size, size=size, p=masses / total)
        return (cells + rng.random(size)) * self.step


def zero_kernel(d: int = 1) -> ExponentialKernel:
    """The d-dimensional kernel that is identically zero."""
    return ExponentialKernel(np.zeros((d, d)), np.ones((d, d)))


# ---------------------------------------------------------------------------
# stability


@dataclass(frozen=True)
class StabilityReport:
    l1_matrix: np.ndarray
    spectral_radius: float
    stable: bool


def spectral_radius(matrix, iters: int = 200, rel_tol: float = 1e-12) -> float:
    """Spectral radius of an entrywise-nonnegative matrix by power iteration.

    A small diagonal shift (subtracted exactly at the end) makes the iteration
    converge for periodic and reducible nonnegative matrices as well.
    """
    a = np.asarray(matrix, dtype=float)
    if np.any(a < 0):
        raise ValueError("power iteration requires a nonnegative matrix")
    if not a.any():
        return 0.0
    shift = 0.05 * max(1.0, float(a.max()))
    b = a + shift * np.eye(a.shape[0])
    x = np.full(a.shape[0], 1.0 / a.shape[0])
    est = 0.0
    for _ in range(iters):
        y = b @ x
        norm = y.sum()  # l1 norm; y stays nonnegative
        new = norm / x.sum()
        x = y / norm
        if est > 0 and abs(new - est) <= rel_tol * est:
            est = new
            break
        est = new
    return max(est - shift, 0.0)


def l1_and_stability(kernel: Kernel) -> StabilityReport:
    """L1 matrix, its spectral radius, and the strict stability verdict ``rho < 1``."""
    l1 = kernel.l1()
    rho = spectral_radius(l1)
    return StabilityReport(_freeze(np.array(l1)), rho, bool(rho < 1.0))


# ---------------------------------------------------------------------------
# nearly unstable families


@dataclass(frozen=True)
class NearlyUnstableFamily:
    """Kernel sequence ``phi_n(t) = a_n * b_n * base(b_n * t)`` approaching criticality.

    ``a_n = 1 - c / b_n`` rises to one, ``b_n`` diverges, and the mass deficit
    ``beta_n = 1 - a_n`` shrinks to zero with ``(1 - a_n) * b_n = c`` exactly.
    Baselines are chosen as ``mu_n = a / beta_n`` so that ``beta_n * mu_n``
    stays pinned at the target limit ``a``.
    """

    base: Kernel
    c: float
    b_schedule: Callable[[int], float]
    a: float = 1.0

    def b(self, n: int) -> float:
        bn = float(self.b_schedule(n))
        if bn <= 0:
            raise ValueError(f"b_n must be positive, got {bn} at n={n}")
        return bn

    def a_coeff(self, n: int) -> float:
        bn = self.b(n)
        if self.c / bn >= 1.0:
            raise ValueError(
                f"c/b_n = {self.c / bn:.4g} >= 1 at n={n}; kernel mass would be nonpositive"
            )
        return 1.0 - self.c / bn

    def beta(self, n: int) -> float:
        return self.c / self.b(n)

    def mu(self, n: int) -> np.ndarray:
        d = self.base.dimension
        return np.full(d, self.a / self.beta(n))

    def kernel_at(self, n: int) -> Kernel:
        return self.base.scaled(self.a_coeff(n), self.b(n))


def _schedule(spec) -> Callable[[int], float]:
    if callable(spec):
        return spec
    power = float(spec)
    return lambda n: float(n) ** power


def make_jr_family(base: Kernel, c: float, b_schedule, a: float = 1.0,
                   rho_tol: float = 1e-6) -> NearlyUnstableFamily:
    """Build a nearly unstable family from a critical base kernel.

    ``b_schedule`` is either a callable ``n -> b_n`` or a float ``p`` meaning
    ``b_n = n**p``.  The base kernel must sit exactly at criticality:
    ``rho(||base||_L1) = 1`` within ``rho_tol``.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    rho = spectral_radius(base.l1())
    if abs(rho - 1.0) > rho_tol:
        raise ValueError(f"base kernel must have spectral radius 1 (got {rho:.8f})")
    return NearlyUnstableFamily(base, float(c), _schedule(b_schedule), float(a))


# ---------------------------------------------------------------------------
# Bernstein functions


@dataclass(frozen=True)
class BernsteinTriplet:
    """Triplet (drift, linear, nu) of ``Phi(z) = drift + linear*z + int (1-e^{-zx}) nu(dx)``.

    The jump measure ``nu`` is held as a finite discretization: atom positions
    and weights on (0, inf).  ``1 / Phi`` is the Laplace transform of the
    limit measure attached to a nearly unstable family.
    """

    drift: float
    linear: float
    atoms: np.ndarray = None
    weights: np.ndarray = None
    truncation_linear_bound: float = 0.0  # missing small-x mass, per unit z
    truncation_tail_bound: float = 0.0    # missing mass above the largest atom

    def __post_init__(self):
        if self.drift < 0 or self.linear < 0:
            raise ValueError("drift and linear coefficients must be nonnegative")
        atoms = np.asarray([] if self.atoms is None else self.atoms, dtype=float)
        weights = np.asarray([] if self.weights is None else self.weights, dtype=float)
        if atoms.shape != weights.shape:
            raise ValueError("atoms and weights must match in shape")
        if np.any(atoms <= 0):
            raise ValueError("atoms must lie in (0, inf)")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        # integrability check for the discretized measure: int (1 ^ x) nu(dx)
        if weights.size and not np.isfinite(np.minimum(atoms, 1.0) @ weights):
            raise ValueError("discretized measure fails the (1 ^ x) moment check")
        object.__setattr__(self, "atoms", _freeze(atoms))
        object.__setattr__(self, "weights", _freeze(weights))

    @classmethod
    def affine(cls, m: float, lam: float) -> "BernsteinTriplet":
        """Triplet with Phi(z) = m + lam * z (no jump part)."""
        return cls(m, lam)

    @classmethod
    def stable(cls, m: float, lam: float, alpha: float,
               x_min: float = 1e-6, x_max: float = 1e3,
               n_atoms: int = 2000) -> "BernsteinTriplet":
        """Discretized stable triplet targeting ``Phi(z) ~ m + lam * z**alpha``.

        The jump density ``C x^{-1-alpha}`` with ``C = lam*alpha/Gamma(1-alpha)``
        is binned on log-spaced cells over ``[x_min, x_max]`` with exact cell
        masses placed at the cell mass centroids; the truncation bounds record
        what the finite window leaves out.
        """
        import scipy.special as sp

        if not (0 < alpha < 1):
            raise ValueError("alpha must lie in (0, 1)")
        c_stable = lam * alpha / sp.gamma(1.0 - alpha)
        edges = np.geomspace(x_min, x_max, n_atoms + 1)
        lo, hi = edges[:-1], edges[1:]
        w = c_stable / alpha * (lo**-alpha - hi**-alpha)
        first = c_stable / (1.0 - alpha) * (hi ** (1 - alpha) - lo ** (1 - alpha))
        centroid = first / w
        return cls(
            m, 0.0, centroid, w,
            truncation_linear_bound=c_stable / (1.0 - alpha) * x_min ** (1.0 - alpha),
            truncation_tail_bound=c_stable / alpha * x_max**-alpha,
        )

    def phi(self, z: float) -> float:
        if z < 0:
            raise KernelDomainError("Bernstein functions are defined for z >= 0")
        jump = 0.0
        if self.atoms.size:
            jump = float(-np.expm1(-z * self.atoms) @ self.weights)
        return self.drift + self.linear * z + jump


def bernstein_eval(triplet: BernsteinTriplet, z: float):
    """Evaluate ``(Phi(z), 1/Phi(z))``; the second slot is None when Phi(z) = 0."""
    phi = triplet.phi(z)
    if phi == 0.0:
        return phi, None
    return phi, 1.0 / phi


# ---------------------------------------------------------------------------
# diagnostics and serialization


def fourier_bound_report(kernel: Kernel, z_values) -> dict:
    """Compare ``rho(F_phi(z))`` against the spectral radius of the L1 matrix.

    Returns the largest transform radius over ``z_values``, the L1 radius, and
    whether the bound ``rho(F_phi(z)) <= rho(||phi||_L1)`` held throughout.
    """
    rho_l1 = spectral_radius(kernel.l1())
    rho_max = 0.0
    for z in np.atleast_1d(z_values):
        mat = np.asarray(kernel.laplace(1j * float(z)), dtype=complex)
        rho_max = max(rho_max, float(np.max(np.abs(np.linalg.eigvals(mat)))))
    return {
        "rho_fourier_max": rho_max,
        "rho_l1": rho_l1,
        "bound_holds": bool(rho_max <= rho_l1 + 1e-10),
    }


def kernel_to_spec(kernel: Kernel) -> dict:
    """JSON-ready description {"form": ..., "params": ...} of a kernel."""
    if isinstance(kernel, ExponentialKernel):
        return {"form": "exponential",
                "params": {"alpha": kernel.alpha.tolist(), "beta": kernel.beta.tolist()}}
    if isinstance(kernel, PowerLawKernel):
        return {"form": "powerlaw",
                "params": {"scale": kernel.scale.tolist(),
                           "exponent": kernel.exponent, "cutoff": kernel.cutoff}}
    if isinstance(kernel, GridSampledKernel):
        return {"form": "grid",
                "params": {"step": kernel.step, "values": kernel.values.tolist()}}
    raise TypeError(f"cannot serialize kernel of type {type(kernel).__name__}")


def kernel_from_spec(spec: dict) -> Kernel:
    """Inverse of :func:`kernel_to_spec`."""
    try:
        form, params = spec["form"], spec["params"]
    except (TypeError, KeyError) as exc:
        raise ValueError("kernel spec must be {'form': ..., 'params': ...}") from exc
    if form == "exponential":
        return ExponentialKernel(np.asarray(params["alpha"]), np.asarray(params["beta"]))
    if form == "powerlaw":
        return PowerLawKernel(np.asarray(params["scale"]),
                              float(params["exponent"]), float(params["cutoff"]))
    if form == "grid":
        return GridSampledKernel(float(params["step"]), np.asarray(params["values"]))
    raise ValueError(f"unknown kernel form {form!r}")
