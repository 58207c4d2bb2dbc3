"""Resolvents of the second kind, scaled limit measures, and transform identities.

The resolvent ``psi = sum_k phi^{*k}`` of a kernel ``phi`` solves
``psi = phi + phi * psi`` (convolution).  On a uniform grid with cell-averaged
kernel values ``phib``, the discrete counterpart

    psi_k = phib_k + h * sum_{j < k} phib_{k-1-j} @ psi_j

is solved exactly by forward substitution, O(m^2) per component pair.  Tables
are immutable once built; distinct tables may be built concurrently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import Grid
from .kernels import Kernel, NearlyUnstableFamily, l1_and_stability

__all__ = [
    "ResolventTable",
    "resolvent_grid",
    "discrete_residual",
    "scaled_resolvent_measure",
    "LaplaceIdentityResult",
    "verify_laplace_identity",
    "Setting1Family",
    "setting1_from_b_matrix",
    "setting1_from_family",
    "fourier_limit_setting1",
    "table_to_csv",
]


@dataclass(frozen=True)
class ResolventTable:
    """Grid table of the resolvent and, optionally, its scaled measure.

    ``psi`` holds one d x d matrix per cell; ``cum_l1`` the running integral
    at the nodes.  When built through :func:`scaled_resolvent_measure` the
    scaled density ``f_n = beta_n * psi``, its cumulative ``F_n``, and the
    scaled L2 norm over the horizon are filled in as well.
    """

    grid: Grid
    kernel_cells: np.ndarray        # (m, d, d) cell-averaged kernel
    psi: np.ndarray                 # (m, d, d) resolvent cell values
    cum_l1: np.ndarray              # (m+1, d, d) integral of psi up to each node
    beta_n: float | None = None
    f_n: np.ndarray | None = None   # (m, d, d)
    F_n: np.ndarray | None = None   # (m+1, d, d)
    scaled_l2: np.ndarray | None = None  # (d, d): beta_n * ||psi||_{L2 on [0, horizon]}

    @property
    def dimension(self) -> int:
        return self.psi.shape[1]

    def laplace_of_psi(self, z) -> np.ndarray:
        """Exact transform of the piecewise-constant table at ``Re z >= 0``."""
        if np.real(z) < 0:
            raise ValueError("requires Re z >= 0")
        edges = self.grid.nodes()
        if z == 0:
            weights = np.full(self.grid.m, self.grid.h)
        else:
            weights = (np.exp(-z * edges[:-1]) - np.exp(-z * edges[1:])) / z
        return np.tensordot(weights, self.psi, axes=(0, 0))


def _forward_substitution(phib: np.ndarray, h: float) -> np.ndarray:
    m, d, _ = phib.shape
    psi = np.empty_like(phib)
    if d == 1:
        pk = phib[:, 0, 0]
        pv = psi[:, 0, 0]
        pv[0] = pk[0]
        for k in range(1, m):
            pv[k] = pk[k] + h * np.dot(pk[k - 1 :: -1][:k], pv[:k])
    else:
        psi[0] = phib[0]
        for k in range(1, m):
            conv = np.einsum("jab,jbc->ac", phib[k - 1 :: -1][:k], psi[:k])
            psi[k] = phib[k] + h * conv
    return psi


def resolvent_grid(kernel: Kernel, grid: Grid, warn_unstable: bool = True) -> ResolventTable:
    """Solve the discrete resolvent equation on ``grid``.

    The forward substitution is exact for the discrete equation, so the
    residual reported by :func:`discrete_residual` sits at rounding level.
    An unstable kernel is allowed (the resolvent exists locally) but triggers
    a warning since its L1 norms grow with the horizon.
    """
    if warn_unstable:
        try:
            report = l1_and_stability(kernel)
            if not report.stable:
                warnings.warn(
                    f"kernel spectral radius {report.spectral_radius:.4f} >= 1; "
                    "resolvent L1 norms grow with the horizon",
                    stacklevel=2,
                )
        except ValueError:
            pass
    phib = kernel.cell_averages(grid)
    psi = _forward_substitution(phib, grid.h)
    cum = np.zeros((grid.m + 1,) + psi.shape[1:])
    np.cumsum(psi * grid.h, axis=0, out=cum[1:])
    return ResolventTable(grid, phib, psi, cum)


def discrete_residual(table: ResolventTable) -> float:
    """Max abs residual of the discrete resolvent equation over all cells."""
    phib, psi, h = table.kernel_cells, table.psi, table.grid.h
    worst = float(np.max(np.abs(psi[0] - phib[0])))
    for k in range(1, psi.shape[0]):
        conv = np.einsum("jab,jbc->ac", phib[k - 1 :: -1][:k], psi[:k])
        worst = max(worst, float(np.max(np.abs(psi[k] - phib[k] - h * conv))))
    return worst


def scaled_resolvent_measure(family: NearlyUnstableFamily, n: int, grid: Grid) -> ResolventTable:
    """Resolvent table of ``phi_n`` with the scaled measure columns filled in.

    Fills ``f_n = beta_n * psi_n`` per cell, the cumulative ``F_n`` at nodes,
    and ``beta_n * ||psi_n||_{L2}`` over the horizon (the uniform-boundedness
    quantity for the scaling limit).
    """
    beta = family.beta(n)
    base = resolvent_grid(family.kernel_at(n), grid, warn_unstable=False)
    l2 = np.sqrt(grid.h * np.sum(base.psi**2, axis=0))
    return ResolventTable(
        grid, base.kernel_cells, base.psi, base.cum_l1,
        beta_n=beta, f_n=beta * base.psi, F_n=beta * base.cum_l1, scaled_l2=beta * l2,
    )


@dataclass(frozen=True)
class LaplaceIdentityResult:
    z: float
    residual: np.ndarray | None   # entrywise |L_psi - (I-L_phi)^{-1} L_phi|
    singular: bool

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual)) if self.residual is not None else np.inf


def verify_laplace_identity(kernel: Kernel, table: ResolventTable, z_list) -> list[LaplaceIdentityResult]:
    """Check ``L_psi(z) = (I - L_phi(z))^{-1} L_phi(z)`` entrywise at each z > 0.

    The left side integrates ``e^{-zt}`` exactly against the table's cell
    values; the right side uses the kernel's analytic transform.  A singular
    ``I - L_phi(z)`` is flagged instead of producing a residual.
    """
    results = []
    eye = np.eye(table.dimension)
    for z in z_list:
        z = float(z)
        if z <= 0:
            raise ValueError("Laplace identity check requires z > 0")
        lhs = table.laplace_of_psi(z)
        lphi = np.asarray(kernel.laplace(z), dtype=float)
        try:
            rhs = np.linalg.solve(eye - lphi, lphi)
        except np.linalg.LinAlgError:
            results.append(LaplaceIdentityResult(z, None, True))
            continue
        results.append(LaplaceIdentityResult(z, np.abs(lhs - rhs), False))
    return results


# ---------------------------------------------------------------------------
# first-order transform families and their limit measure


@dataclass(frozen=True)
class Setting1Family:
    """Kernel sequence described through its Fourier transforms.

    ``fourier_phi(n, z)`` returns the d x d transform matrix at frequency z;
    the family is assumed to satisfy ``F_phi_n(z) = I - beta(n) * B(z) + o(beta(n))``
    with invertible ``B(z)``.  When ``b_matrix`` is unknown it is estimated
    from the largest available index.
    """

    beta: Callable[[int], float]
    fourier_phi: Callable[[int, float], np.ndarray]
    b_matrix: Callable[[float], np.ndarray] | None = None


def setting1_from_b_matrix(b_matrix, beta) -> Setting1Family:
    """Exact first-order family ``F_phi_n(z) = I - beta_n * B(z)``."""

    def fourier_phi(n, z):
        b = np.asarray(b_matrix(z))
        return np.eye(b.shape[0]) - beta(n) * b

    return Setting1Family(beta, fourier_phi, b_matrix)


def setting1_from_family(family: NearlyUnstableFamily) -> Setting1Family:
    """Adapter computing transforms from the family's actual kernels."""
    return Setting1Family(
        beta=family.beta,
        fourier_phi=lambda n, z: np.asarray(family.kernel_at(n).laplace(1j * z), dtype=complex),
    )


@dataclass(frozen=True)
class Setting1Result:
    z: float
    n_list: tuple
    transforms: list          # F_{F_n}(z) per n, or None where singular
    limit: np.ndarray         # B(z)^{-1}
    deviations: np.ndarray    # max-abs distance to the limit per n (inf where singular)


def fourier_limit_setting1(family: Setting1Family, z: float, n_list) -> Setting1Result:
    """Scaled transforms ``beta_n (I - F_phi_n)^{-1} F_phi_n`` and their limit.

    Along a schedule of indices the transforms approach ``B(z)^{-1}``; the
    deviations should shrink at rate ``O(beta_n)``.
    """
    n_list = tuple(int(n) for n in n_list)
    sample = np.asarray(family.fourier_phi(n_list[0], z))
    eye = np.eye(sample.shape[0])

    if family.b_matrix is not None:
        b = np.asarray(family.b_matrix(z))
    else:
        n_ref = max(n_list)
        b = (eye - family.fourier_phi(n_ref, z)) / family.beta(n_ref)
    limit = np.linalg.inv(b)

    transforms, deviations = [], []
    for n in n_list:
        fphi = np.asarray(family.fourier_phi(n, z))
        try:
            val = family.beta(n) * np.linalg.solve(eye - fphi, fphi)
        except np.linalg.LinAlgError:
            transforms.append(None)
            deviations.append(np.inf)
            continue
        transforms.append(val)
        deviations.append(float(np.max(np.abs(val - limit))))
    return Setting1Result(float(z), n_list, transforms, limit, np.asarray(deviations))


# ---------------------------------------------------------------------------
# export


def table_to_csv(table: ResolventTable, path) -> None:
    """Write the table with one row per cell.

    Columns: ``t`` (cell midpoint), ``psi_ij`` (cell value), ``cumnorm_ij``
    (integral up to the cell's right node), and, when present, ``fn_ij`` and
    ``Fn_ij`` likewise.
    """
    d = table.dimension
    pairs = [(i, j) for i in range(d) for j in range(d)]
    header = ["t"]
    header += [f"psi_{i+1}{j+1}" for i, j in pairs]
    header += [f"cumnorm_{i+1}{j+1}" for i, j in pairs]
    if table.f_n is not None:
        header += [f"fn_{i+1}{j+1}" for i, j in pairs]
        header += [f"Fn_{i+1}{j+1}" for i, j in pairs]
    mids = table.grid.midpoints()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(table.grid.m):
            row = [mids[k]]
            row += [table.psi[k, i, j] for i, j in pairs]
            row += [table.cum_l1[k + 1, i, j] for i, j in pairs]
            if table.f_n is not None:
                row += [table.f_n[k, i, j] for i, j in pairs]
                row += [table.F_n[k + 1, i, j] for i, j in pairs]
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
