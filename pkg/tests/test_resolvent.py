import numpy as np
import pytest

from nuhawkes import (
    ExponentialKernel,
    Grid,
    GridSampledKernel,
    fourier_limit_setting1,
    make_jr_family,
    resolvent_grid,
    scaled_resolvent_measure,
    setting1_from_b_matrix,
    setting1_from_family,
    verify_laplace_identity,
    zero_kernel,
)
from nuhawkes.resolvent import discrete_residual, table_to_csv
from nuhawkes.rng import stream

EXP_12 = ExponentialKernel(1.0, 2.0)


def neumann_series_oracle(cells: np.ndarray, h: float, terms: int) -> np.ndarray:
    """Truncated sum of repeated discrete convolutions of the cell values.

    Uses the same discretization convention as the forward solver
    (hat{f*g}_k = h * sum_j f_{k-1-j} g_j) but is built independently from
    np.convolve, term by term.
    """
    m = cells.shape[0]
    total = cells.copy()
    power = cells.copy()
    for _ in range(terms - 1):
        conv = h * np.convolve(power, cells)[: m + 1]
        power = np.concatenate([[0.0], conv[: m - 1]])  # the k-1 shift
        total += power
    return total


def test_resolvent_exponential_closed_form():
    # Laplace inversion oracle: L_phi / (1 - L_phi) = 1/(z+1) -> psi(t) = e^{-t}
    g = Grid(5.0, 1e-3)
    tab = resolvent_grid(EXP_12, g)
    err = np.max(np.abs(tab.psi[:, 0, 0] - np.exp(-g.midpoints())))
    assert err <= 1e-3


def test_resolvent_zero_kernel():
    tab = resolvent_grid(zero_kernel(), Grid(1.0, 0.01))
    assert not tab.psi.any()
    assert not tab.cum_l1.any()


def test_resolvent_matches_truncated_neumann_series():
    g = Grid(1.0, 1.0 / 256)
    tab = resolvent_grid(EXP_12, g)
    cells = tab.kernel_cells[:, 0, 0]
    oracle = neumann_series_oracle(cells, g.h, terms=10)
    assert np.max(np.abs(tab.psi[:, 0, 0] - oracle)) <= 1e-4


def test_discrete_residual_is_rounding_level():
    tab = resolvent_grid(EXP_12, Grid(2.0, 0.005))
    assert discrete_residual(tab) <= 1e-12


def test_resolvent_dominates_kernel_cells():
    rng = stream(7, "psi-lower-bound")
    vals = rng.random(64) * 0.8
    k = GridSampledKernel(1.0 / 64, vals)
    tab = resolvent_grid(k, Grid(1.0, 1.0 / 64))
    assert np.all(tab.psi >= tab.kernel_cells - 1e-14)


def test_resolvent_monotone_in_kernel():
    # enlarging the kernel cell-wise never decreases psi (nonnegative series)
    rng = stream(21, "monotone")
    for trial in range(5):
        lo = rng.random(50) * 0.5
        hi = lo + rng.random(50) * 0.3
        g = Grid(1.0, 0.02)
        tab_lo = resolvent_grid(GridSampledKernel(0.02, lo), g)
        tab_hi = resolvent_grid(GridSampledKernel(0.02, hi), g)
        assert np.all(tab_hi.psi >= tab_lo.psi - 1e-12)


def test_resolvent_refinement_order():
    g1, g2 = Grid(2.0, 0.02), Grid(2.0, 0.01)
    e1 = np.max(np.abs(resolvent_grid(EXP_12, g1).psi[:, 0, 0] - np.exp(-g1.midpoints())))
    e2 = np.max(np.abs(resolvent_grid(EXP_12, g2).psi[:, 0, 0] - np.exp(-g2.midpoints())))
    order = np.log2(e1 / e2)
    assert order >= 0.9


def test_resolvent_matrix_case_against_scalar_blocks():
    # block-diagonal kernel decouples into scalar problems
    alpha = np.diag([1.0, 0.5])
    beta = np.array([[2.0, 1.0], [1.0, 1.5]])
    k = ExponentialKernel(alpha, beta)
    g = Grid(1.0, 0.005)
    tab = resolvent_grid(k, g)
    s1 = resolvent_grid(ExponentialKernel(1.0, 2.0), g)
    s2 = resolvent_grid(ExponentialKernel(0.5, 1.5), g)
    assert np.allclose(tab.psi[:, 0, 0], s1.psi[:, 0, 0], atol=1e-12)
    assert np.allclose(tab.psi[:, 1, 1], s2.psi[:, 0, 0], atol=1e-12)
    assert np.allclose(tab.psi[:, 0, 1], 0.0)


def test_unstable_kernel_warns():
    with pytest.warns(UserWarning, match="spectral radius"):
        resolvent_grid(ExponentialKernel(3.0, 1.0), Grid(1.0, 0.01))


# ---------------------------------------------------------------------------
# Laplace identity


def test_laplace_identity_exponential():
    g = Grid(5.0, 1e-3)
    tab = resolvent_grid(EXP_12, g)
    res = verify_laplace_identity(EXP_12, tab, [1.0])
    assert res[0].max_residual <= 1e-3


def test_laplace_identity_large_z():
    g = Grid(5.0, 1e-3)
    tab = resolvent_grid(EXP_12, g)
    res = verify_laplace_identity(EXP_12, tab, [1e4])
    assert res[0].max_residual <= 1e-6


def test_laplace_identity_zero_kernel():
    k = zero_kernel()
    tab = resolvent_grid(k, Grid(1.0, 0.01))
    res = verify_laplace_identity(k, tab, [0.5, 2.0])
    assert all(r.max_residual == 0.0 for r in res)


def test_laplace_identity_singular_flag():
    # ||phi|| = 3, so 1 - L_phi(z) = 0 exactly at z = 2
    k = ExponentialKernel(3.0, 1.0)
    with pytest.warns(UserWarning):
        tab = resolvent_grid(k, Grid(1.0, 0.01))
    res = verify_laplace_identity(k, tab, [2.0])
    assert res[0].singular


def test_laplace_identity_rejects_nonpositive_z():
    tab = resolvent_grid(EXP_12, Grid(1.0, 0.01))
    with pytest.raises(ValueError):
        verify_laplace_identity(EXP_12, tab, [0.0])


# ---------------------------------------------------------------------------
# scaled measures


def test_scaled_measure_geometric_series_oracle():
    # beta_n ||psi_n||_L1 = sum over generations beta_n a_n^k = a_n
    fam = make_jr_family(ExponentialKernel(1.0, 1.0), c=1.0, b_schedule=1.0)
    g = Grid(25.0, 2e-3)
    for n in (5, 20):
        tab = scaled_resolvent_measure(fam, n, g)
        a_n = fam.a_coeff(n)
        # closed-form truncation of the geometric total at the horizon
        decay = 1.0  # psi_n decays at rate b_n (1 - a_n) = c
        truncated = a_n * (1.0 - np.exp(-decay * g.horizon))
        assert tab.F_n[-1, 0, 0] == pytest.approx(truncated, abs=5e-3)
        assert tab.F_n[-1, 0, 0] == pytest.approx(a_n, abs=1e-2)


def test_scaled_measure_zero_kernel_family():
    fam = make_jr_family(ExponentialKernel(1.0, 1.0), c=1.0, b_schedule=1.0)
    tab = scaled_resolvent_measure(fam, 10, Grid(1.0, 0.01))
    assert tab.f_n is not None and np.all(tab.f_n >= 0)


def test_scaled_measure_converges_to_limit_distribution():
    # JR exponential family with c = 1: F_n(t) -> 1 - e^{-t} pointwise.
    # The square-root schedule keeps b_n * h resolved while beta_n shrinks,
    # so the O(beta_n) model error dominates the grid error.
    fam = make_jr_family(ExponentialKernel(1.0, 1.0), c=1.0, b_schedule=0.5)
    g = Grid(2.0, 5e-4)
    nodes = g.nodes()
    limit = 1.0 - np.exp(-nodes)
    errs = []
    for n in (16, 64, 256):
        tab = scaled_resolvent_measure(fam, n, g)
        errs.append(np.max(np.abs(tab.F_n[:, 0, 0] - limit)))
    assert errs[0] > errs[1] > errs[2]
    # residual dominated by beta_256 = 1/16
    assert errs[2] <= 0.08


def test_condition_l2_bound_along_family():
    fam = make_jr_family(ExponentialKernel(1.0, 1.0), c=1.0, b_schedule=1.0)
    g = Grid(5.0, 1e-3)
    vals = [scaled_resolvent_measure(fam, n, g).scaled_l2[0, 0] for n in (10, 40, 160)]
    assert max(vals) <= 2.0 * min(vals)
    assert max(vals) < 1.0  # c * a_n / sqrt(2) here


# ---------------------------------------------------------------------------
# first-order transform families


def test_setting1_scalar_reduces_to_reciprocal():
    fam = setting1_from_b_matrix(lambda z: np.array([[1.0 + z]]), lambda n: 1.0 / n)
    out = fourier_limit_setting1(fam, 1.0, [10, 100])
    assert out.limit[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_setting1_diagonal_matrix_inverse_oracle():
    b = lambda z: np.diag([1.0 + z, 2.0 + z])
    fam = setting1_from_b_matrix(b, lambda n: 1.0 / n)
    out = fourier_limit_setting1(fam, 1.0, [10, 100, 1000])
    oracle = np.linalg.inv(b(1.0))  # diag(1/2, 1/3) by direct inversion
    assert np.allclose(out.limit, np.diag([0.5, 1.0 / 3.0]), atol=1e-12)
    assert np.allclose(out.limit, oracle, atol=1e-12)
    assert np.all(np.diff(out.deviations) < 0)


def test_setting1_deviation_first_order():
    # exact linear family: the scaled transform is B^{-1} - beta_n I
    fam = setting1_from_b_matrix(lambda z: np.array([[1.0 + z]]), lambda n: 1.0 / n)
    out = fourier_limit_setting1(fam, 1.0, [10, 100, 1000])
    ratios = out.deviations[:-1] / out.deviations[1:]
    assert np.allclose(ratios, 10.0, rtol=1e-6)


def test_setting1_from_nearly_unstable_family():
    fam = make_jr_family(ExponentialKernel(1.0, 1.0), c=1.0, b_schedule=1.0)
    s1 = setting1_from_family(fam)
    out = fourier_limit_setting1(s1, 0.7, [20, 80, 320, 1280])
    assert np.all(np.diff(out.deviations) < 0)


# ---------------------------------------------------------------------------
# export


def test_table_csv_columns(tmp_path):
    fam = make_jr_family(ExponentialKernel(1.0, 1.0), c=1.0, b_schedule=1.0)
    tab = scaled_resolvent_measure(fam, 10, Grid(0.1, 0.01))
    out = tmp_path / "table.csv"
    table_to_csv(tab, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,psi_11,cumnorm_11,fn_11,Fn_11"
    assert len(lines) == 1 + tab.grid.m
