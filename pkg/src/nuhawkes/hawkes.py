"""Exact simulation of multivariate self-exciting point processes.

Two samplers produce the same law on event histories:

* ``simulate_thinning``  -- Ogata-style rejection from a piecewise-constant
  majorant.  Between events the conditional intensity of a kernel that is
  entrywise nonincreasing can only fall, so the intensity right after an
  event dominates until the next one.  Exponential kernels get O(1) state
  updates per candidate.
* ``simulate_cluster``   -- branching construction: Poisson immigrants, each
  event of type j spawning type-i offspring at rate ``||phi_ij||_L1`` with
  displacement density ``phi_ij / ||phi_ij||``.  Requires a stable kernel.

Event timestamps within a path are strictly increasing across all components;
floating-point ties (probability zero) are broken by redrawing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .grids import Grid
from .kernels import ExponentialKernel, Kernel, l1_and_stability
from .rng import stream, substream_seed, run_indexed

__all__ = [
    "UnsupportedSimulationError",
    "HawkesParams",
    "HawkesPath",
    "RescaledTriple",
    "simulate_thinning",
    "simulate_cluster",
    "intensity_on_grid",
    "compensator_martingale",
    "counts_on_grid",
    "rescale_path",
    "ensemble",
    "events_to_csv",
    "nodes_to_csv",
]


class UnsupportedSimulationError(RuntimeError):
    """Raised when no exact sampler is available for the requested kernel."""


@dataclass(frozen=True)
class HawkesParams:
    """Baseline rates, excitation kernel, and simulation horizon."""

    mu: np.ndarray
    kernel: Kernel
    T: float

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if mu.ndim != 1 or mu.size != self.kernel.dimension:
            raise ValueError("mu must be a vector matching the kernel dimension")
        if np.any(mu < 0):
            raise ValueError("baseline rates must be nonnegative")
        if not (self.T > 0):
            raise ValueError("horizon T must be positive")
        mu = np.ascontiguousarray(mu)
        mu.flags.writeable = False
        object.__setattr__(self, "mu", mu)

    @property
    def dimension(self) -> int:
        return self.kernel.dimension


@dataclass(frozen=True)
class HawkesPath:
    """One sampled history: strictly increasing event times with component labels.

    Node series (intensity, counts, compensator, martingale part on a grid)
    are attached when the path was simulated with an output grid, or later via
    :func:`compensator_martingale`.
    """

    params: HawkesParams
    times: np.ndarray
    components: np.ndarray
    grid: Grid | None = None
    intensity: np.ndarray | None = None     # (m+1, d), left limits
    counts: np.ndarray | None = None        # (m+1, d)
    compensator: np.ndarray | None = None   # (m+1, d)
    martingale: np.ndarray | None = None    # (m+1, d)

    def __post_init__(self):
        t = np.ascontiguousarray(np.asarray(self.times, dtype=float))
        c = np.ascontiguousarray(np.asarray(self.components, dtype=np.int64))
        t.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "components", c)

    def event_times(self, i: int) -> np.ndarray:
        return self.times[self.components == i]

    def total_counts(self) -> np.ndarray:
        return np.bincount(self.components, minlength=self.params.dimension).astype(float)

    def with_node_series(self, grid: Grid) -> "HawkesPath":
        lam = intensity_on_grid(self, grid)
        cnt = counts_on_grid(self, grid)
        comp, mart = compensator_martingale(self, grid)
        return replace(self, grid=grid, intensity=lam, counts=cnt,
                       compensator=comp, martingale=mart)


@dataclass(frozen=True)
class RescaledTriple:
    """Spatially rescaled node series ``(b^2 Lambda, b^2 N, b M)`` with ``M = N - Lambda``."""

    grid: Grid
    beta_n: float
    compensator: np.ndarray
    counts: np.ndarray
    martingale: np.ndarray

    def identity_residual(self) -> float:
        """Max abs residual of ``N - Lambda = beta_n * M`` over all nodes."""
        return float(np.max(np.abs(self.counts - self.compensator - self.beta_n * self.martingale)))


# ---------------------------------------------------------------------------
# thinning


def _draw_gap(rng, rate: float) -> float:
    gap = rng.exponential(1.0 / rate)
    while gap == 0.0:  # probability-zero tie guard
        gap = rng.exponential(1.0 / rate)
    return gap


def _thinning_exponential_1d(mu, alpha, beta, T, rng):
    times = []
    t = 0.0
    excite = 0.0  # sum over past events of alpha * exp(-beta * (t - tau))
    bound = mu + excite
    while bound > 0.0:
        gap = _draw_gap(rng, bound)
        t += gap
        if t > T:
            break
        excite *= np.exp(-beta * gap)
        lam = mu + excite
        if bound * rng.random() <= lam:
            times.append(t)
            excite += alpha
            bound = mu + excite
        else:
            bound = lam
    n = len(times)
    return np.asarray(times), np.zeros(n, dtype=np.int64)


def _thinning_exponential(params: HawkesParams, rng):
    kernel: ExponentialKernel = params.kernel
    d = params.dimension
    if d == 1:
        return _thinning_exponential_1d(
            float(params.mu[0]), float(kernel.alpha[0, 0]), float(kernel.beta[0, 0]),
            params.T, rng,
        )
    mu = params.mu
    state = np.zeros((d, d))  # state[i, j]: excitation of i from past events of j
    times, comps = [], []
    t = 0.0
    bound = float(mu.sum())
    while bound > 0.0:
        gap = _draw_gap(rng, bound)
        t += gap
        if t > params.T:
            break
        state *= np.exp(-kernel.beta * gap)
        lam = mu + state.sum(axis=1)
        total = float(lam.sum())
        u = bound * rng.random()
        if u <= total:
            j = int(np.searchsorted(np.cumsum(lam), u))
            j = min(j, d - 1)
            times.append(t)
            comps.append(j)
            state[:, j] += kernel.alpha[:, j]
            bound = float(mu.sum() + state.sum())
        else:
            bound = total
    return np.asarray(times), np.asarray(comps, dtype=np.int64)


def _thinning_monotone(params: HawkesParams, rng):
    # general nonincreasing kernel: recompute the intensity from the history
    kernel = params.kernel
    d = params.dimension
    mu = params.mu
    times, comps = [], []
    t = 0.0
    bound = float(mu.sum())

    def intensity_at(s):
        lam = mu.copy()
        if times:
            lags = s - np.asarray(times)
            vals = kernel.eval_lags(lags)  # (N, d, d); zero where lag < 0
            lam = lam + vals[np.arange(len(times)), :, comps].sum(axis=0)
        return lam

    while bound > 0.0:
        gap = _draw_gap(rng, bound)
        t += gap
        if t > params.T:
            break
        lam = intensity_at(t)
        total = float(lam.sum())
        u = bound * rng.random()
        if u <= total:
            j = int(np.searchsorted(np.cumsum(lam), u))
            j = min(j, d - 1)
            times.append(t)
            comps.append(j)
            # intensity_at now includes the fresh event's kick at lag 0
            bound = float(intensity_at(t).sum())
        else:
            bound = total
    return np.asarray(times), np.asarray(comps, dtype=np.int64)


def simulate_thinning(params: HawkesParams, rng_seed, grid: Grid | None = None) -> HawkesPath:
    """Exact sample of the process on ``[0, T]`` by thinning.

    Requires an entrywise nonincreasing kernel (the post-event intensity then
    dominates until the next event).  Unstable kernels are simulated but
    produce a warning.  ``rng_seed`` is an integer or a live generator; with
    an integer, path ``i`` of an ensemble should use
    ``substream_seed(seed, "path", i)``.
    """
    kernel = params.kernel
    if not kernel.is_nonincreasing:
        raise UnsupportedSimulationError(
            "thinning needs an entrywise nonincreasing kernel; use simulate_cluster"
        )
    _warn_if_unstable(kernel)
    rng = stream(rng_seed)
    if isinstance(kernel, ExponentialKernel):
        times, comps = _thinning_exponential(params, rng)
    else:
        times, comps = _thinning_monotone(params, rng)
    path = HawkesPath(params, times, comps)
    return path.with_node_series(grid) if grid is not None else path


def _warn_if_unstable(kernel: Kernel):
    try:
        report = l1_and_stability(kernel)
    except ValueError:
        return
    if not report.stable:
        warnings.warn(
            f"kernel spectral radius {report.spectral_radius:.4f} >= 1; "
            "sample paths may explode",
            stacklevel=3,
        )


# ---------------------------------------------------------------------------
# cluster (branching) construction


def simulate_cluster(params: HawkesParams, rng_seed) -> HawkesPath:
    """Exact sample via the branching construction; events only.

    Immigrants of component i arrive as Poisson(mu_i T); each event of type j
    spawns type-i offspring with count Poisson(||phi_ij||_L1) displaced by the
    normalized kernel density.  Descendants past the horizon are pruned, which
    is exact because displacements are nonnegative.  Refuses unstable kernels
    (cluster sizes would be infinite with positive probability).
    """
    report = l1_and_stability(params.kernel)
    if not report.stable:
        raise ValueError(
            f"cluster construction requires a stable kernel (rho = {report.spectral_radius:.4f})"
        )
    for retry in range(64):
        key = rng_seed if retry == 0 else substream_seed(
            rng_seed if isinstance(rng_seed, int) else 0, "cluster-retry", retry
        )
        rng = stream(key)
        times, comps = _cluster_once(params, report.l1_matrix, rng)
        order = np.argsort(times, kind="stable")
        times, comps = times[order], comps[order]
        if times.size < 2 or np.all(np.diff(times) > 0.0):
            return HawkesPath(params, times, comps)
        # duplicate timestamps have probability zero; redraw the path
    raise RuntimeError("could not produce a tie-free path after 64 attempts")


def _cluster_once(params: HawkesParams, branching: np.ndarray, rng):
    d = params.dimension
    all_t = [np.empty(0)]
    all_c = [np.empty(0, dtype=np.int64)]
    gen_t, gen_c = [], []
    for i in range(d):
        count = rng.poisson(params.mu[i] * params.T)
        arrivals = rng.random(count) * params.T
        gen_t.append(arrivals)
        gen_c.append(np.full(count, i, dtype=np.int64))
    gen_t = np.concatenate(gen_t)
    gen_c = np.concatenate(gen_c)

    while gen_t.size:
        all_t.append(gen_t)
        all_c.append(gen_c)
        next_t, next_c = [], []
        for j in range(d):
            parents = gen_t[gen_c == j]
            if not parents.size:
                continue
            for i in range(d):
                mean = branching[i, j]
                if mean == 0.0:
                    continue
                counts = rng.poisson(mean, parents.size)
                total = int(counts.sum())
                if not total:
                    continue
                born = np.repeat(parents, counts)
                born = born + params.kernel.sample_displacement(i, j, total, rng)
                born = born[born <= params.T]
                if born.size:
                    next_t.append(born)
                    next_c.append(np.full(born.size, i, dtype=np.int64))
        gen_t = np.concatenate(next_t) if next_t else np.empty(0)
        gen_c = np.concatenate(next_c) if next_c else np.empty(0, dtype=np.int64)

    return np.concatenate(all_t), np.concatenate(all_c)


# ---------------------------------------------------------------------------
# node series: intensity, counts, compensator, martingale


def _exp_sweep(path: HawkesPath, nodes: np.ndarray, max_block: int = 2_000_000):
    """Closed-form intensity left limits and compensator at the nodes.

    Exponential kernels admit exact per-event contributions
    ``alpha e^{-beta lag}`` and ``alpha/beta (1 - e^{-beta lag})``; nodes are
    processed in blocks so the (nodes x events) lag matrix stays bounded.
    """
    kernel: ExponentialKernel = path.params.kernel
    mu = path.params.mu
    d = mu.size
    alpha, beta = kernel.alpha, kernel.beta
    times, comps = path.times, path.components
    lam_nodes = np.tile(mu, (nodes.size, 1))
    comp_nodes = mu[None, :] * nodes[:, None]
    if not times.size:
        return lam_nodes, comp_nodes
    chunk = max(1, max_block // times.size)
    for start in range(0, nodes.size, chunk):
        block = nodes[start : start + chunk]
        lags = block[:, None] - times[None, :]          # (b, N)
        past = lags > 0.0
        safe = np.where(past, lags, 0.0)
        for j in range(d):
            mask = past & (comps[None, :] == j)
            for i in range(d):
                decay = np.exp(-beta[i, j] * safe)
                lam_nodes[start : start + block.size, i] += alpha[i, j] * np.where(mask, decay, 0.0).sum(axis=1)
                comp_nodes[start : start + block.size, i] += (alpha[i, j] / beta[i, j]) * np.where(mask, 1.0 - decay, 0.0).sum(axis=1)
    return lam_nodes, comp_nodes


def _generic_nodes(path: HawkesPath, nodes: np.ndarray, mode: str, chunk: int = 256):
    kernel = path.params.kernel
    mu = path.params.mu
    out = np.empty((nodes.size, mu.size))
    times, comps = path.times, path.components
    for start in range(0, nodes.size, chunk):
        block = nodes[start : start + chunk]
        lags = block[:, None] - times[None, :]  # (b, N)
        if mode == "intensity":
            # strict past only: a lag of exactly zero is the event's own node
            vals = kernel.eval_lags(np.where(lags > 0, lags, -1.0))
        else:
            vals = np.where(
                lags[..., None, None] > 0,
                kernel.integral(np.maximum(lags, 0.0)),
                0.0,
            )
        # pick column comps[e] of each (d, d) matrix: (b, N, d)
        if times.size:
            idx = comps.reshape(1, -1, 1, 1)
            picked = np.take_along_axis(vals, np.broadcast_to(idx, vals.shape[:3] + (1,)), axis=3)[..., 0]
        else:
            picked = vals.reshape(block.size, 0, mu.size)
        contrib = picked.sum(axis=1)
        if mode == "intensity":
            out[start : start + block.size] = mu + contrib
        else:
            out[start : start + block.size] = mu * block[:, None] + contrib
    return out


def intensity_on_grid(path: HawkesPath, grid: Grid) -> np.ndarray:
    """Left-limit conditional intensity at the grid nodes, shape (m+1, d)."""
    _check_horizon(path, grid)
    nodes = grid.nodes()
    if isinstance(path.params.kernel, ExponentialKernel):
        lam, _ = _exp_sweep(path, nodes)
        return lam
    return _generic_nodes(path, nodes, "intensity")


def compensator_martingale(path: HawkesPath, grid: Grid):
    """Compensator and martingale part at the grid nodes, each (m+1, d).

    Exponential kernels integrate the piecewise-analytic intensity in closed
    form; other parametric and grid kernels use their exact running integrals.
    """
    _check_horizon(path, grid)
    nodes = grid.nodes()
    if isinstance(path.params.kernel, ExponentialKernel):
        _, comp = _exp_sweep(path, nodes)
    else:
        comp = _generic_nodes(path, nodes, "compensator")
    counts = counts_on_grid(path, grid)
    return comp, counts - comp


def counts_on_grid(path: HawkesPath, grid: Grid) -> np.ndarray:
    """Event counts N_i(t_k) = #{tau <= t_k}, shape (m+1, d)."""
    _check_horizon(path, grid)
    nodes = grid.nodes()
    out = np.empty((nodes.size, path.params.dimension))
    for i in range(path.params.dimension):
        out[:, i] = np.searchsorted(path.event_times(i), nodes, side="right")
    return out


def _check_horizon(path: HawkesPath, grid: Grid):
    if grid.horizon > path.params.T + grid.h:
        raise ValueError(
            f"grid horizon {grid.horizon} exceeds the path horizon {path.params.T}"
        )


def rescale_path(path: HawkesPath, beta_n: float, grid: Grid) -> RescaledTriple:
    """Spatial rescaling ``(beta^2 Lambda, beta^2 N, beta M)`` on the grid."""
    if not (beta_n > 0):
        raise ValueError("beta_n must be positive")
    comp, mart = compensator_martingale(path, grid)
    counts = counts_on_grid(path, grid)
    return RescaledTriple(grid, beta_n, beta_n**2 * comp, beta_n**2 * counts, beta_n * mart)


# ---------------------------------------------------------------------------
# ensembles and export


def ensemble(params: HawkesParams, seed: int, n_paths: int, *, method: str = "thinning",
             extract=None, threads: int = 1) -> list:
    """Simulate ``n_paths`` independent paths with per-path substreams.

    ``extract(path)`` maps each path to whatever summary the caller wants to
    keep (defaults to the path itself); results come back ordered by path
    index regardless of thread count.
    """
    simulate = {"thinning": simulate_thinning, "cluster": simulate_cluster}[method]

    def worker(i):
        path = simulate(params, substream_seed(seed, "path", i))
        return extract(path) if extract is not None else path

    return run_indexed(worker, n_paths, threads)


def events_to_csv(path: HawkesPath, filename) -> None:
    """Event list as CSV with columns ``component,time``."""
    with open(filename, "w", newline="") as fh:
        fh.write("component,time\n")
        for c, t in zip(path.components, path.times):
            fh.write(f"{int(c) + 1},{t:.17g}\n")


def nodes_to_csv(path: HawkesPath, filename) -> None:
    """Node series as CSV: ``t, lambda_i, N_i, Lambda_i, M_i`` per component."""
    if path.grid is None:
        raise ValueError("path has no node series; simulate with a grid or attach one")
    d = path.params.dimension
    header = ["t"]
    for name in ("lambda", "N", "Lambda", "M"):
        header += [f"{name}_{i+1}" for i in range(d)]
    nodes = path.grid.nodes()
    with open(filename, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for k, t in enumerate(nodes):
            row = [t]
            row += list(path.intensity[k])
            row += list(path.counts[k])
            row += list(path.compensator[k])
            row += list(path.martingale[k])
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
