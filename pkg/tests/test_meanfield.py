import numpy as np
import pytest
from scipy import stats as sps

from nuhawkes import (
    ExponentialKernel,
    Grid,
    HawkesParams,
    MeanFieldParams,
    empirical_snapshot,
    ks_distance,
    qv_identity_check,
    resolvent_grid,
    simulate_coupled_auxiliary,
    simulate_particles,
    simulate_thinning,
)
from nuhawkes.rng import stream, substream_seed

KERNEL = ExponentialKernel(1.0, 2.0)


def make_params(n=20, mu0=5.0, K=3, T=1.0, beta=0.1, kernel=KERNEL):
    return MeanFieldParams(n=n, mu0=mu0, kernel=kernel, K=K, T=T, beta_n=beta)


# ---------------------------------------------------------------------------
# reductions and conditional laws


def test_n1_same_seed_exact_equality():
    mf = make_params(n=1, K=1)
    ps = simulate_particles(mf, 7321)
    hp = simulate_thinning(HawkesParams(np.array([5.0]), KERNEL, 1.0), 7321)
    assert np.array_equal(ps.times, hp.times)


def test_n1_distributional_equality_vs_hawkes():
    mf = make_params(n=1, mu0=1.0, K=1)
    agg = [simulate_particles(mf, substream_seed(1, "path", i)).times.size for i in range(3000)]
    hw = [simulate_thinning(HawkesParams(np.array([1.0]), KERNEL, 1.0),
                            substream_seed(2, "path", i)).times.size for i in range(3000)]
    assert ks_distance(np.array(agg, float), np.array(hw, float), level=0.01).passed


def test_zero_baseline_zero_counts():
    ps = simulate_particles(make_params(mu0=0.0), 5)
    assert ps.times.size == 0
    assert not ps.tagged_counts.any()


def test_tagged_count_binomial_conditional_law():
    # conditional on the aggregate total m, N_1(T) ~ Binomial(m, 1/n)
    mf = make_params(n=5, mu0=4.0, K=1)
    totals, tagged = [], []
    for i in range(5000):
        ps = simulate_particles(mf, substream_seed(3, "path", i), grid=Grid(1.0, 0.5))
        totals.append(ps.times.size)
        tagged.append(int(ps.tagged_counts[0, -1]))
    totals, tagged = np.array(totals), np.array(tagged)
    m_star = int(np.bincount(totals).argmax())
    sel = tagged[totals == m_star]
    assert sel.size >= 300
    pmf = sps.binom.pmf(np.arange(m_star + 1), m_star, 1.0 / mf.n)
    # bin the tail so expected counts stay above 5
    edges = [k for k in range(m_star + 1) if pmf[k] * sel.size >= 5]
    hi = max(edges) + 1
    obs = np.bincount(np.minimum(sel, hi), minlength=hi + 1)
    exp = np.append(pmf[:hi], pmf[hi:].sum()) * sel.size
    chi = sps.chisquare(obs, exp)
    assert chi.pvalue > 0.01


def test_exchangeability_under_relabeling():
    mf = make_params(n=10, K=0)
    ps = simulate_particles(mf, 99)
    rng = stream(100)
    perm = rng.permutation(mf.n)
    counts = ps.particle_counts_at(1.0)
    relabeled = np.bincount(perm[ps.assignment], minlength=mf.n).astype(float)
    # symmetric statistics are invariant
    assert np.array_equal(np.sort(counts), np.sort(relabeled))
    assert counts.sum() == relabeled.sum()


def test_aggregate_equivalence_different_seeds():
    mf = make_params(n=30, mu0=3.0, K=0)
    agg = [simulate_particles(mf, substream_seed(4, "p", i)).times.size for i in range(2500)]
    hw = [simulate_thinning(HawkesParams(np.array([3.0]), KERNEL, 1.0),
                            substream_seed(5, "p", i)).times.size for i in range(2500)]
    assert ks_distance(np.array(agg, float), np.array(hw, float), level=0.01).passed


def test_k_greater_than_n_rejected():
    with pytest.raises(ValueError):
        make_params(n=3, K=4)


# ---------------------------------------------------------------------------
# snapshots


def test_snapshot_masses_and_mean_identity():
    mf = make_params(n=50, mu0=8.0, K=5)
    ps = simulate_particles(mf, 41)
    snaps = empirical_snapshot(ps, [0.3, 1.0])
    for snap, t in zip(snaps, (0.3, 1.0)):
        assert snap.weights.sum() == pytest.approx(1.0, abs=1e-12)
        n_events = int(np.searchsorted(ps.times, t, side="right"))
        # mean of the count marginal is exactly beta^2 * Nbar(t)
        assert snap.marginal(0).mean() == pytest.approx(
            mf.beta_n**2 * n_events, abs=1e-12
        )


def test_snapshot_outside_horizon_rejected():
    ps = simulate_particles(make_params(), 42)
    with pytest.raises(ValueError):
        empirical_snapshot(ps, [2.0])


def test_tagged_martingale_identity_and_qv():
    mf = make_params(n=12, mu0=6.0, K=4)
    ps = simulate_particles(mf, funny_seed := 4242)
    n, b = mf.n, mf.beta_n
    counts_r, mart_r = ps.rescaled_tagged()
    comp_r = ps.rescaled_tagged_compensator()
    # N_i^(n) - Lambda0^(n) = sqrt(n beta^2) M_i^(n) at all nodes
    gap = counts_r - comp_r[None, :] - np.sqrt(n * b**2) * mart_r
    assert np.max(np.abs(gap)) <= 1e-10
    # qv of sqrt(n) beta M_i is n beta^2 N_i exactly: jump sizes sqrt(n) beta
    for i in range(mf.K):
        times_i = ps.times[ps.assignment == i]
        qv = (np.sqrt(n) * b) ** 2 * times_i.size
        assert qv == pytest.approx(n * b**2 * ps.tagged_counts[i, -1], abs=1e-12)


def test_tagged_particle_qv_report():
    mf = make_params(n=8, mu0=6.0, K=2)
    ps = simulate_particles(mf, 2121)

    class TaggedView:
        def __init__(self, path, i):
            self.times = path.times[path.assignment == i]
            self.components = np.zeros(self.times.size, dtype=np.int64)

    for i in range(mf.K):
        assert qv_identity_check(TaggedView(ps, i)).passed


# ---------------------------------------------------------------------------
# coupled auxiliary system


def test_coupled_dominance_many_paths():
    mf = make_params(n=100, mu0=20.0, K=5)
    for i in range(200):
        main, aux = simulate_coupled_auxiliary(mf, substream_seed(6, "path", i),
                                               grid=Grid(1.0, 0.1))
        assert np.all(aux.theta <= main.lambda0 + 1e-12)
        assert np.all(aux.tagged_counts <= main.tagged_counts)
        assert np.all(aux.untagged_aggregate_counts <= main.aggregate_counts)


def test_coupled_k0_systems_coincide():
    mf = make_params(n=20, mu0=10.0, K=0)
    main, aux = simulate_coupled_auxiliary(mf, 77)
    assert np.array_equal(main.times, aux.aux_times)
    assert np.array_equal(main.assignment, aux.aux_particles)
    assert np.allclose(aux.theta, main.lambda0, atol=1e-12)
    assert np.allclose(aux.Theta, main.Lambda0, atol=1e-12)


def test_coupled_main_marginal_matches_plain_simulation():
    mf = make_params(n=25, mu0=6.0, K=3)
    coupled = [simulate_coupled_auxiliary(mf, substream_seed(8, "p", i),
                                          grid=Grid(1.0, 0.5))[0].times.size
               for i in range(2500)]
    plain = [simulate_particles(mf, substream_seed(9, "p", i),
                                grid=Grid(1.0, 0.5)).times.size
             for i in range(2500)]
    assert ks_distance(np.array(coupled, float), np.array(plain, float), level=0.01).passed


def test_coupled_expectation_identity():
    # E[n(lambda0 - theta)](T) = (K/n) int psi(T-s) E[n theta(s)] ds
    mf = make_params(n=20, mu0=10.0, K=4)
    grid = Grid(1.0, 1.0 / 64)
    n_paths = 3000
    diff_T = np.empty(n_paths)
    theta_nodes = np.zeros(grid.m + 1)
    for i in range(n_paths):
        main, aux = simulate_coupled_auxiliary(mf, substream_seed(12, "path", i), grid=grid)
        diff_T[i] = mf.n * (main.lambda0[-1] - aux.theta[-1])
        theta_nodes += mf.n * aux.theta
    theta_nodes /= n_paths

    psi = resolvent_grid(mf.kernel, grid).psi[:, 0, 0]
    theta_mid = 0.5 * (theta_nodes[1:] + theta_nodes[:-1])
    rhs = (mf.K / mf.n) * grid.h * float(np.dot(psi[::-1], theta_mid))
    se = diff_T.std() / np.sqrt(n_paths)
    assert abs(diff_T.mean() - rhs) <= 3.0 * se
