"""Exchangeable particle systems of self-exciting processes and their couplings.

All ``n`` particles share one intensity fed by every particle's events through
an interaction kernel scaled by ``1/n``, so the aggregate count is itself a
univariate self-exciting process with baseline ``mu0`` and the unscaled
kernel.  Conditional on the aggregate, each event belongs to any particle with
probability ``1/n``; the simulator therefore runs one aggregate path and
assigns events uniformly, which is verified against the n = 1 reduction and
the binomial conditional law in the test suite.

``simulate_coupled_auxiliary`` additionally builds, from the same per-particle
randomness, the comparison system whose intensity ignores the feedback of the
first ``K`` (tagged) particles.  Its intensity and counts are dominated by the
main system's pathwise, by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import Grid
from .hawkes import (
    HawkesParams,
    HawkesPath,
    simulate_cluster,
    simulate_thinning,
)
from .kernels import ExponentialKernel, Kernel
from .limits import EmpiricalMeasureSnapshot
from .rng import stream

__all__ = [
    "MeanFieldParams",
    "ParticleSystemPath",
    "AuxiliarySystemPath",
    "simulate_particles",
    "empirical_snapshot",
    "simulate_coupled_auxiliary",
    "snapshot_to_csv",
]


@dataclass(frozen=True)
class MeanFieldParams:
    """Particle count, baseline, interaction kernel, tagging, horizon, scaling.

    ``kernel`` is the aggregate-level interaction kernel (each ordered particle
    pair interacts through ``kernel / n``); ``K`` particles are tagged for
    individual tracking; ``beta_n`` is the spatial scaling parameter used in
    the rescaled views.
    """

    n: int
    mu0: float
    kernel: Kernel
    K: int
    T: float
    beta_n: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("particle count n must be at least 1")
        if not (0 <= self.K <= self.n):
            raise ValueError("tagged count K must satisfy 0 <= K <= n")
        if self.mu0 < 0:
            raise ValueError("baseline mu0 must be nonnegative")
        if self.kernel.dimension != 1:
            raise ValueError("mean-field interaction kernel must be univariate")
        if not (self.T > 0 and self.beta_n > 0):
            raise ValueError("T and beta_n must be positive")

    @classmethod
    def from_family(cls, family, n: int, K: int, T: float) -> "MeanFieldParams":
        """Parameters at family index n: the particle count doubles as the index."""
        return cls(n=n, mu0=float(family.mu(n)[0]), kernel=family.kernel_at(n),
                   K=K, T=T, beta_n=family.beta(n))

    def aggregate_params(self) -> HawkesParams:
        return HawkesParams(np.array([self.mu0]), self.kernel, self.T)


@dataclass(frozen=True)
class ParticleSystemPath:
    """Aggregate events with particle assignments and grid node series.

    ``lambda0``/``Lambda0`` are the common per-particle intensity and
    compensator; the aggregate ones are ``n`` times those.  Tagged particles
    keep full count series; untagged ones exist only through ``assignment``.
    """

    params: MeanFieldParams
    times: np.ndarray                 # aggregate event times, strictly increasing
    assignment: np.ndarray            # particle index in 0..n-1 per event
    grid: Grid
    lambda0: np.ndarray               # (m+1,)
    Lambda0: np.ndarray               # (m+1,)
    tagged_counts: np.ndarray         # (K, m+1)

    @property
    def aggregate_counts(self) -> np.ndarray:
        return np.searchsorted(self.times, self.grid.nodes(), side="right").astype(float)

    def tagged_martingales(self) -> np.ndarray:
        """M_i = N_i - Lambda0 for the tagged particles, shape (K, m+1)."""
        return self.tagged_counts - self.Lambda0[None, :]

    def rescaled_aggregate(self):
        """(beta^2 * aggregate compensator, beta^2 * aggregate counts, beta * aggregate martingale)."""
        b = self.params.beta_n
        agg_comp = self.params.n * self.Lambda0
        agg_counts = self.aggregate_counts
        return b**2 * agg_comp, b**2 * agg_counts, b * (agg_counts - agg_comp)

    def rescaled_tagged(self):
        """(n beta^2 * N_i, sqrt(n) beta * M_i) for tagged particles."""
        n, b = self.params.n, self.params.beta_n
        return n * b**2 * self.tagged_counts, np.sqrt(n) * b * self.tagged_martingales()

    def rescaled_tagged_compensator(self) -> np.ndarray:
        n, b = self.params.n, self.params.beta_n
        return n * b**2 * self.Lambda0

    def particle_counts_at(self, t: float) -> np.ndarray:
        """Counts of all n particles at time t, shape (n,)."""
        upto = np.searchsorted(self.times, t, side="right")
        return np.bincount(self.assignment[:upto], minlength=self.params.n).astype(float)


def _aggregate_series(params: MeanFieldParams, agg_path: HawkesPath, nodes: np.ndarray):
    from .hawkes import _exp_sweep, _generic_nodes  # shared node machinery

    if isinstance(params.kernel, ExponentialKernel):
        lam, comp = _exp_sweep(agg_path, nodes)
    else:
        lam = _generic_nodes(agg_path, nodes, "intensity")
        comp = _generic_nodes(agg_path, nodes, "compensator")
    return lam[:, 0], comp[:, 0]


def simulate_particles(params: MeanFieldParams, rng_seed, grid: Grid | None = None,
                       method: str = "thinning") -> ParticleSystemPath:
    """Sample the particle system by simulating its aggregate and assigning events.

    The aggregate is drawn with the same seed derivation as a direct
    univariate simulation would use, so the two agree path-for-path at equal
    seeds.  Assignments come from a separate sub-stream when the seed is an
    integer (with a live generator they are drawn after the events).
    """
    grid = grid or Grid(params.T, params.T / 256)
    simulate = {"thinning": simulate_thinning, "cluster": simulate_cluster}[method]
    agg_path = simulate(params.aggregate_params(), rng_seed)
    if isinstance(rng_seed, (int, np.integer)):
        assign_rng = stream(rng_seed, "assignment")
    else:
        assign_rng = rng_seed
    assignment = assign_rng.integers(0, params.n, size=agg_path.times.size)

    lam_agg, comp_agg = _aggregate_series(params, agg_path, grid.nodes())
    lambda0 = lam_agg / params.n
    Lambda0 = comp_agg / params.n
    tagged = _tagged_count_series(agg_path.times, assignment, params.K, grid.nodes())
    return ParticleSystemPath(params, agg_path.times, assignment, grid,
                              lambda0, Lambda0, tagged)


def _tagged_count_series(times, assignment, K, nodes) -> np.ndarray:
    tagged = np.empty((K, nodes.size))
    for i in range(K):
        tagged[i] = np.searchsorted(times[assignment == i], nodes, side="right")
    return tagged


def empirical_snapshot(path: ParticleSystemPath, times) -> list[EmpiricalMeasureSnapshot]:
    """Rescaled particle-level empirical measures at the requested times.

    Each snapshot carries the n pairs ``(n b^2 N_i(t), sqrt(n) b (N_i(t) - Lambda0(t)))``
    with uniform weights 1/n; the per-particle compensator is evaluated
    exactly at t rather than interpolated.
    """
    params = path.params
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(times > params.T + 1e-12):
        raise ValueError("snapshot times must lie within the horizon")
    order = np.argsort(times)
    sorted_t = times[order]
    agg = HawkesPath(params.aggregate_params(), path.times,
                     np.zeros(path.times.size, dtype=np.int64))
    _, comp_sorted = _aggregate_series(params, agg, sorted_t)
    comp = np.empty_like(comp_sorted)
    comp[order] = comp_sorted
    n, b = params.n, params.beta_n
    out = []
    for t, lam0_comp in zip(times, comp):
        counts = path.particle_counts_at(t)
        values = np.column_stack([
            n * b**2 * counts,
            np.sqrt(n) * b * (counts - lam0_comp / n),
        ])
        out.append(EmpiricalMeasureSnapshot(
            time=float(t),
            values=values,
            weights=np.full(n, 1.0 / n),
            source="simulation",
        ))
    return out


# ---------------------------------------------------------------------------
# coupled auxiliary system


@dataclass(frozen=True)
class AuxiliarySystemPath:
    """Comparison system driven by the same per-particle randomness.

    Its intensity ``theta`` feeds back only the untagged particles' auxiliary
    events, so ``theta <= lambda0`` and every auxiliary count is dominated by
    the corresponding main count, pathwise.
    """

    params: MeanFieldParams
    aux_times: np.ndarray             # all auxiliary events (tagged and untagged)
    aux_particles: np.ndarray
    grid: Grid
    theta: np.ndarray                 # (m+1,)
    Theta: np.ndarray                 # (m+1,)
    tagged_counts: np.ndarray         # (K, m+1)

    def tagged_compensated(self) -> np.ndarray:
        return self.tagged_counts - self.Theta[None, :]

    @property
    def untagged_aggregate_counts(self) -> np.ndarray:
        mask = self.aux_particles >= self.params.K
        return np.searchsorted(self.aux_times[mask], self.grid.nodes(), side="right").astype(float)

    def untagged_aggregate_compensator(self) -> np.ndarray:
        return (self.params.n - self.params.K) * self.Theta


def simulate_coupled_auxiliary(params: MeanFieldParams, rng_seed,
                               grid: Grid | None = None):
    """Jointly sample the main and auxiliary systems from one proposal stream.

    Each accepted aggregate proposal carries a uniform position inside the
    total-intensity band; the strip index picks the particle, the in-strip
    height decides auxiliary acceptance against ``theta <= lambda0``.  This
    realizes a per-particle driving-noise coupling under which the auxiliary
    system is dominated by the main one; the dominance is asserted on exit.

    Returns ``(ParticleSystemPath, AuxiliarySystemPath)``.
    """
    if params.K < 0:
        raise ValueError("K must be nonnegative")
    grid = grid or Grid(params.T, params.T / 256)
    rng = stream(rng_seed) if isinstance(rng_seed, (int, np.integer)) else rng_seed

    kernel = params.kernel
    exponential = isinstance(kernel, ExponentialKernel)
    if not (exponential or kernel.is_nonincreasing):
        raise ValueError("coupled simulation requires a nonincreasing kernel")
    if exponential:
        alpha = float(kernel.alpha[0, 0])
        beta = float(kernel.beta[0, 0])
        kick = alpha
    else:
        kick = float(kernel.eval_lags(np.asarray(0.0))[0, 0])

    n, K, mu0, T = params.n, params.K, params.mu0, params.T
    main_t, main_p = [], []
    aux_t, aux_p = [], []
    e_main = 0.0   # sum of kernel values over main events
    e_aux = 0.0    # same over auxiliary feedback (untagged auxiliary) events

    def excitation(now, events):
        if not events:
            return 0.0
        return float(kernel.eval_lags(now - np.asarray(events))[:, 0, 0].sum())

    t = 0.0
    bound = mu0 + e_main
    while bound > 0.0:
        gap = rng.exponential(1.0 / bound)
        while gap == 0.0:
            gap = rng.exponential(1.0 / bound)
        t += gap
        if t > T:
            break
        if exponential:
            decay = np.exp(-beta * gap)
            e_main *= decay
            e_aux *= decay
        else:
            e_main = excitation(t, main_t)
            e_aux = excitation(t, [tau for tau, p in zip(aux_t, aux_p) if p >= K])
        agg_rate = mu0 + e_main
        u = bound * rng.random()
        if u <= agg_rate:
            lam0 = agg_rate / n
            j = min(int(u / lam0), n - 1)
            v = u - j * lam0
            main_t.append(t)
            main_p.append(j)
            theta_now = (mu0 + e_aux) / n
            if v <= theta_now:
                aux_t.append(t)
                aux_p.append(j)
                if j >= K:
                    e_aux += kick
            e_main += kick
            bound = mu0 + e_main
        else:
            bound = agg_rate

    main_times = np.asarray(main_t)
    main_particles = np.asarray(main_p, dtype=np.int64)
    aux_times = np.asarray(aux_t)
    aux_particles = np.asarray(aux_p, dtype=np.int64)

    nodes = grid.nodes()
    agg_params = params.aggregate_params()
    main_agg = HawkesPath(agg_params, main_times, np.zeros(main_times.size, dtype=np.int64))
    lam_agg, comp_agg = _aggregate_series(params, main_agg, nodes)
    main_path = ParticleSystemPath(
        params, main_times, main_particles, grid,
        lam_agg / n, comp_agg / n,
        _tagged_count_series(main_times, main_particles, K, nodes),
    )

    fb_mask = aux_particles >= K
    fb_path = HawkesPath(agg_params, aux_times[fb_mask],
                         np.zeros(int(fb_mask.sum()), dtype=np.int64))
    theta_agg, Theta_agg = _aggregate_series(params, fb_path, nodes)
    aux_path = AuxiliarySystemPath(
        params, aux_times, aux_particles, grid,
        theta_agg / n, Theta_agg / n,
        _tagged_count_series(aux_times, aux_particles, K, nodes),
    )

    _assert_dominance(main_path, aux_path)
    return main_path, aux_path


def _assert_dominance(main: ParticleSystemPath, aux: AuxiliarySystemPath):
    if np.any(aux.theta > main.lambda0 + 1e-12):
        raise AssertionError("coupling violated theta <= lambda0")
    if np.any(aux.tagged_counts > main.tagged_counts):
        raise AssertionError("coupling violated tagged auxiliary count dominance")


def snapshot_to_csv(snapshots, filename) -> None:
    """Write snapshots as CSV rows ``t, particle_index, count_value, martingale_value``."""
    with open(filename, "w", newline="") as fh:
        fh.write("t,particle_index,count_value,martingale_value\n")
        for snap in snapshots:
            vals = np.atleast_2d(snap.values)
            for idx in range(vals.shape[0]):
                row = [snap.time, float(idx + 1), vals[idx, 0],
                       vals[idx, 1] if vals.shape[1] > 1 else 0.0]
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
