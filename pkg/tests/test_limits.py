import math

import numpy as np
import pytest

from nuhawkes import (
    BernsteinTriplet,
    CIRParams,
    Grid,
    LimitKernelSpec,
    cir_correspondence,
    ensemble_cir,
    ensemble_sve,
    holder_exponent,
    ks_distance,
    limit_empirical_law,
    sample_regime_limit,
    solve_cir,
    solve_sve,
)
from nuhawkes.limits import _sve_recursion
from nuhawkes.rng import stream, substream_seed

AFFINE = BernsteinTriplet.affine(1.0, 1.0)


def mean_law_max_z(Y, F_nodes, a):
    """Largest |z| of the nodewise mean against F(t) a, skipping degenerate nodes."""
    mean = Y.mean(axis=0)
    sd = Y.std(axis=0)
    live = sd > 1e-9
    z = np.abs(mean[live] - F_nodes[live] * a) * math.sqrt(Y.shape[0]) / sd[live]
    dead = ~live
    assert np.all(np.abs(mean[dead] - F_nodes[dead] * a) <= 1e-10)
    return float(z.max())


# ---------------------------------------------------------------------------
# CIR


def test_cir_deterministic_limit():
    # sigma = 0, xi0 = 0: dxi = b(a - xi)dt, so xi(t) = a(1 - e^{-bt}) + O(h)
    g = Grid(1.0, 1e-3)
    path = solve_cir(CIRParams(1.0, 1.0, 0.0, 0.0), g, 0)
    target = 1.0 - np.exp(-g.nodes())
    assert np.max(np.abs(path.values - target)) <= 2e-3


def test_cir_moment_odes():
    params = CIRParams(b=1.0, a=1.0, sigma=0.5, xi0=0.0)
    g = Grid(1.0, 1e-3)
    xi1 = ensemble_cir(params, g, 710, 4000)[:, -1]
    mean_th = params.mean_at(1.0)       # a(1 - e^{-b})
    var_th = params.variance_at(1.0)    # (a sigma^2 / 2b)(1 - e^{-b})^2
    assert var_th == pytest.approx((1.0 * 0.25 / 2.0) * (1 - np.exp(-1)) ** 2, rel=1e-12)
    se_mean = xi1.std() / math.sqrt(xi1.size)
    assert abs(xi1.mean() - mean_th) <= 3 * se_mean
    centered_sq = (xi1 - xi1.mean()) ** 2
    se_var = centered_sq.std() / math.sqrt(xi1.size)
    assert abs(xi1.var() - var_th) <= 3 * se_var


def test_cir_nonnegative_output():
    g = Grid(1.0, 0.01)
    vals = ensemble_cir(CIRParams(2.0, 0.1, 1.0, 0.0), g, 4, 200)
    assert np.all(vals >= 0.0)


def test_cir_warns_on_coarse_grid():
    with pytest.warns(UserWarning, match="Euler"):
        solve_cir(CIRParams(20.0, 1.0, 0.5, 0.0), Grid(1.0, 0.1), 0)


def test_cir_parameters_validated():
    with pytest.raises(ValueError):
        CIRParams(-1.0, 1.0, 1.0, 0.0)


def test_cir_correspondence_from_affine_triplet():
    pars = cir_correspondence(BernsteinTriplet.affine(2.0, 0.5), target_a=3.0)
    assert pars.b == pytest.approx(4.0)
    assert pars.a == pytest.approx(1.5)
    assert pars.sigma == pytest.approx(2.0)
    assert pars.xi0 == 0.0
    with pytest.raises(ValueError):
        cir_correspondence(BernsteinTriplet.stable(1.0, 1.0, 0.7), 1.0)


# ---------------------------------------------------------------------------
# limit kernel specs


def test_exponential_type_spec_matches_laplace_inversion():
    # 1/(m + lam z) inverts to f(t) = e^{-m t / lam} / lam
    g = Grid(1.0, 1e-3)
    spec = LimitKernelSpec.from_triplet(BernsteinTriplet.affine(2.0, 0.5), g)
    mids = g.midpoints()
    f_exact = np.exp(-4.0 * mids) / 0.5
    assert np.max(np.abs(spec.density_cells[:, 0, 0] - f_exact)) <= 5e-3
    assert spec.distribution_nodes[-1, 0, 0] <= 1.0 / 2.0 + 1e-12


def test_fractional_spec_exact_cells():
    g = Grid(1.0, 0.01)
    spec = LimitKernelSpec.fractional(0.75, g)
    from scipy.special import gamma

    # exact cell integral of t^{alpha-1}/Gamma(1-alpha)
    edges = g.nodes()
    cell0 = (edges[1] ** 0.75) / (0.75 * gamma(0.25)) / g.h
    assert spec.density_cells[0, 0, 0] == pytest.approx(cell0, rel=1e-12)
    assert np.all(np.diff(spec.distribution_nodes[:, 0, 0]) >= 0)


def test_fractional_normalization_choices():
    g = Grid(1.0, 0.01)
    comp = LimitKernelSpec.fractional(0.75, g)  # Gamma(1 - alpha) convention
    gam = LimitKernelSpec.fractional(0.75, g, normalization="gamma")
    from scipy.special import gamma

    ratio = gamma(0.25) / gamma(0.75)
    assert gam.density_cells[5, 0, 0] == pytest.approx(
        comp.density_cells[5, 0, 0] * ratio, rel=1e-12
    )


def test_spec_from_resolvent_table():
    from nuhawkes import ExponentialKernel, make_jr_family, scaled_resolvent_measure

    fam = make_jr_family(ExponentialKernel(1.0, 1.0), c=1.0, b_schedule=0.5)
    g = Grid(1.0, 0.005)
    tab = scaled_resolvent_measure(fam, 64, g)
    spec = LimitKernelSpec.from_resolvent_table(tab)
    assert spec.dimension == 1
    assert spec.provenance["form"] == "resolvent-table"


def test_stable_triplet_has_no_closed_inverse():
    with pytest.raises(ValueError, match="resolvent"):
        LimitKernelSpec.from_triplet(BernsteinTriplet.stable(1.0, 1.0, 0.75), Grid(1.0, 0.01))


# ---------------------------------------------------------------------------
# Volterra solver


def test_sve_zero_mass_gives_zero_solution():
    g = Grid(1.0, 0.01)
    spec = LimitKernelSpec.from_triplet(AFFINE, g)
    path = solve_sve(spec, [0.0], g, 3)
    assert not path.Y.any() and not path.X.any() and not path.Z.any()


def test_sve_x_nondecreasing_every_path():
    g = Grid(1.0, 0.01)
    spec = LimitKernelSpec.fractional(0.75, g)
    for i in range(20):
        path = solve_sve(spec, [1.0], g, substream_seed(5, "p", i))
        assert np.all(np.diff(path.X[:, 0]) >= 0.0)


def test_sve_mean_law_exponential_type():
    g = Grid(1.0, 1.0 / 64)
    spec = LimitKernelSpec.from_triplet(AFFINE, g)
    Y, _ = ensemble_sve(spec, 1.0, 888, 4000)
    assert mean_law_max_z(Y, spec.distribution_nodes[:, 0, 0], 1.0) <= 4.0


def test_sve_mean_law_fractional():
    g = Grid(1.0, 1.0 / 64)
    spec = LimitKernelSpec.fractional(0.75, g)
    Y, _ = ensemble_sve(spec, 1.0, 889, 4000)
    assert mean_law_max_z(Y, spec.distribution_nodes[:, 0, 0], 1.0) <= 4.0


def test_sve_cir_pathwise_coupling():
    # same driving noise: the two schemes differ by O(h)
    pars = cir_correspondence(AFFINE, 1.0)
    sups = []
    for h in (1e-3, 5e-4):
        g = Grid(1.0, h)
        spec = LimitKernelSpec.from_triplet(AFFINE, g)
        sve = solve_sve(spec, [1.0], g, 31415)
        cir = solve_cir(pars, g, 31415)
        sups.append(np.max(np.abs(sve.Y[:, 0] - cir.values)))
    assert sups[0] <= 0.02
    assert sups[1] <= 0.8 * sups[0]


def test_sve_cir_marginal_distribution():
    g = Grid(1.0, 1.0 / 256)
    spec = LimitKernelSpec.from_triplet(AFFINE, g)
    _, X = ensemble_sve(spec, 1.0, 11, 2000)
    Y, _ = ensemble_sve(spec, 1.0, 11, 2000)
    cir = ensemble_cir(cir_correspondence(AFFINE, 1.0), g, 12, 2000)
    assert ks_distance(Y[:, -1], cir[:, -1], level=0.01).passed


def test_sve_grid_mismatch_rejected():
    g = Grid(1.0, 0.01)
    spec = LimitKernelSpec.from_triplet(AFFINE, g)
    with pytest.raises(ValueError):
        solve_sve(spec, [1.0], Grid(1.0, 0.02), 0)


def test_sve_multivariate_diagonal_blocks():
    g = Grid(1.0, 0.02)
    base = LimitKernelSpec.from_triplet(AFFINE, g)
    f = np.zeros((g.m, 2, 2))
    F = np.zeros((g.m + 1, 2, 2))
    for i in range(2):
        f[:, i, i] = base.density_cells[:, 0, 0]
        F[:, i, i] = base.distribution_nodes[:, 0, 0]
    spec2 = LimitKernelSpec(g, f, F)
    rng = stream(21)
    dB = rng.standard_normal((g.m, 2)) * math.sqrt(g.h)
    Y2, X2, Z2 = _sve_recursion(spec2, np.array([1.0, 2.0]), dB)
    Y1a, _, _ = _sve_recursion(base, np.array([1.0]), dB[:, :1])
    Y1b, _, _ = _sve_recursion(base, np.array([2.0]), dB[:, 1:])
    assert np.allclose(Y2[:, 0], Y1a[:, 0], atol=1e-12)
    assert np.allclose(Y2[:, 1], Y1b[:, 0], atol=1e-12)


# ---------------------------------------------------------------------------
# regime limits


def make_xbar(seed=1, h=1.0 / 128):
    g = Grid(1.0, h)
    spec = LimitKernelSpec.from_triplet(AFFINE, g)
    return solve_sve(spec, [1.0], g, seed)


def test_regime_zero_counts_equal_aggregate():
    xbar = make_xbar()
    sample = sample_regime_limit(0.0, xbar, K=4, rng_seed=2)
    for i in range(4):
        assert np.array_equal(sample.X[i], xbar.X[:, 0])


def test_regime_zero_bridge_variance_tracks_clock():
    # <Z_i>(t) = Xbar(t): MC mean of Z_i(1)^2 over fresh draws matches
    xbar = make_xbar()
    x1 = xbar.X[-1, 0]
    z_vals = np.array([
        sample_regime_limit(0.0, xbar, 1, substream_seed(3, "w", i)).Z[0, -1]
        for i in range(4000)
    ])
    se = (z_vals**2).std() / math.sqrt(z_vals.size)
    assert abs((z_vals**2).mean() - x1) <= 3 * se


def test_regime_zero_distinct_particles_uncorrelated():
    xbar = make_xbar()
    prods = []
    for i in range(2000):
        s = sample_regime_limit(0.0, xbar, 2, substream_seed(4, "w", i))
        prods.append(s.Z[0, -1] * s.Z[1, -1])
    prods = np.array(prods)
    se = prods.std() / math.sqrt(prods.size)
    assert abs(prods.mean()) <= 3 * se


def test_regime_finite_conditional_poisson():
    xbar = make_xbar()
    zeta = 0.5
    x1 = xbar.X[-1, 0]
    draws = np.array([
        sample_regime_limit(zeta, xbar, 1, substream_seed(5, "p", i)).X[0, -1]
        for i in range(4000)
    ])
    # conditionally X_i(1)/zeta ~ Poisson(Xbar(1)/zeta)
    assert np.allclose(draws / zeta, np.round(draws / zeta))
    se = draws.std() / math.sqrt(draws.size)
    assert abs(draws.mean() - x1) <= 3 * se
    centered = (draws - x1) ** 2
    se2 = centered.std() / math.sqrt(draws.size)
    assert abs(centered.mean() - zeta * x1) <= 3 * se2


def test_regime_finite_martingale_variance():
    xbar = make_xbar()
    z1 = np.array([
        sample_regime_limit(1.0, xbar, 1, substream_seed(6, "p", i)).Z[0, -1]
        for i in range(4000)
    ])
    se = (z1**2).std() / math.sqrt(z1.size)
    assert abs(z1.mean()) <= 3 * z1.std() / math.sqrt(z1.size)
    assert abs((z1**2).mean() - xbar.X[-1, 0]) <= 3 * se


def test_regime_infinite_identically_zero():
    xbar = make_xbar()
    s = sample_regime_limit(np.inf, xbar, 5, 7)
    assert not s.X.any() and not s.Z.any()


def test_regime_negative_zeta_rejected():
    with pytest.raises(ValueError):
        sample_regime_limit(-1.0, make_xbar(), 1, 0)


# ---------------------------------------------------------------------------
# limit empirical laws


def test_limit_law_zero_regime_degenerate_at_zero_clock():
    g = Grid(1.0, 0.01)
    spec = LimitKernelSpec.from_triplet(AFFINE, g)
    xbar = solve_sve(spec, [0.0], g, 1)  # zero mass -> zero clock
    snap = limit_empirical_law(0.0, xbar, 1.0, 500, 2)
    assert np.all(snap.marginal(0) == 0.0)
    assert np.all(snap.marginal(1) == 0.0)


def test_limit_law_zero_regime_structure():
    xbar = make_xbar()
    x1 = xbar.X[-1, 0]
    snap = limit_empirical_law(0.0, xbar, 1.0, 20_000, 3)
    assert np.all(snap.marginal(0) == x1)
    z = snap.marginal(1)
    assert abs(z.mean()) <= 3 * z.std() / math.sqrt(z.size)
    assert z.var() == pytest.approx(x1, rel=0.1)


def test_limit_law_finite_regime_moments():
    xbar = make_xbar()
    x1 = xbar.X[-1, 0]
    zeta = 1.0
    snap = limit_empirical_law(zeta, xbar, 1.0, 20_000, 4)
    xs = snap.marginal(0)
    se_mean = xs.std() / math.sqrt(xs.size)
    assert abs(xs.mean() - x1) <= 3 * se_mean
    centered = (xs - x1) ** 2
    se_var = centered.std() / math.sqrt(xs.size)
    assert abs(centered.mean() - zeta * x1) <= 3 * se_var


def test_limit_law_infinite_regime_single_atom():
    snap = limit_empirical_law(np.inf, make_xbar(), 1.0, 100, 5)
    assert snap.values.shape == (1, 2)
    assert not snap.values.any()
    assert snap.weights[0] == 1.0


# ---------------------------------------------------------------------------
# regularity diagnostic on solver output


def test_fractional_sve_holder_exponent():
    g = Grid(1.0, 2.0**-13)
    spec = LimitKernelSpec.fractional(0.75, g)
    path = solve_sve(spec, [1.0], g, 99)
    est = holder_exponent(path.Y[:, 0])
    assert abs(est.exponent - 0.25) <= 0.1
