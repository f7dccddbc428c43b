"""Spectral calculus of the free operator L0.

The generalized eigenfunctions phi_lam(x) (Laguerre polynomials in lam,
normalized phi_lam(0) = 1) carry the whole absolutely continuous calculus:
the spectral measure is e^{-lam} phi phi* dlam, the resolvent vector
psi_z = (L0 - z)^{-1} chi_0 splits as psi_z = f_z phi_z + xi_z with xi_z
entire in z, and the resolvent kernel factorizes as

    R_z(x, y) = phi_z(min(x,y)) * psi_z(max(x,y)).

Quadrature over the spectrum is done on graded composite Gauss-Legendre
grids refined geometrically toward the threshold lam = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from . import specfun
from .errors import QuadratureError, StabilityError
from .lattice import LatticeVector, TAIL_EXPONENTIAL, l0_apply_array, l0_diagonals


def laguerre_phi_array(lam: complex, n_trunc: int) -> np.ndarray:
    """phi_lam(0..N) by the three-term recurrence
    (x+1) phi(x+1) = (2x+1-lam) phi(x) - x phi(x-1), phi(0) = 1."""
    dtype = np.complex128 if isinstance(lam, complex) and lam.imag != 0 else np.float64
    lam = lam if dtype == np.complex128 else float(np.real(lam))
    out = np.empty(n_trunc + 1, dtype=dtype)
    out[0] = 1.0
    if n_trunc >= 1:
        out[1] = 1.0 - lam
    for x in range(1, n_trunc):
        out[x + 1] = ((2 * x + 1 - lam) * out[x] - x * out[x - 1]) / (x + 1)
    return out


def laguerre_phi(lam: complex, n_trunc: int) -> LatticeVector:
    return LatticeVector(laguerre_phi_array(lam, n_trunc))


def laguerre_phi_grid(lams: np.ndarray, n_trunc: int) -> np.ndarray:
    """phi_lam(x) for a whole grid of real lam at once; shape (N+1, len(lams))."""
    lams = np.asarray(lams, dtype=np.float64)
    out = np.empty((n_trunc + 1, lams.size))
    out[0] = 1.0
    if n_trunc >= 1:
        out[1] = 1.0 - lams
    for x in range(1, n_trunc):
        out[x + 1] = ((2 * x + 1 - lams) * out[x] - x * out[x - 1]) / (x + 1)
    return out


def xi_array(z: complex, n_trunc: int) -> np.ndarray:
    """xi_z = psi_z - f_z phi_z: the solution of (L0 - z) xi = chi_0 with
    xi(0) = 0.  Each entry is a polynomial in z, so this recurrence is exact
    across the spectral cut."""
    dtype = np.complex128 if isinstance(z, complex) and z.imag != 0 else np.float64
    z = z if dtype == np.complex128 else float(np.real(z))
    out = np.empty(n_trunc + 1, dtype=dtype)
    out[0] = 0.0
    if n_trunc >= 1:
        out[1] = -1.0
    for x in range(1, n_trunc):
        out[x + 1] = ((2 * x + 1 - z) * out[x] - x * out[x - 1]) / (x + 1)
    return out


def xi_vector(z: complex, n_trunc: int) -> LatticeVector:
    return LatticeVector(xi_array(z, n_trunc))


def psi_array(z: complex, n_trunc: int, tail_tol: float = 1e-10) -> np.ndarray:
    """Resolvent vector psi_z = (L0 - z)^{-1} chi_0 on the truncation.

    Solved as a tridiagonal system with a Dirichlet zero beyond the
    truncation; this selects the decaying solution the way a backward
    (Miller-style) pass would, without the forward-recurrence digit loss.
    A tail monitor rejects truncations too small for the decay scale of z.
    """
    if np.imag(z) == 0 and np.real(z) >= 0:
        raise ValueError("psi_z is defined off the spectrum; use pv_psi on the cut")
    diag, off = l0_diagonals(n_trunc)
    dtype = np.complex128 if np.imag(z) != 0 else np.float64
    zz = complex(z) if dtype == np.complex128 else float(np.real(z))
    ab = np.zeros((3, n_trunc + 1), dtype=dtype)
    ab[0, 1:] = off
    ab[1, :] = diag - zz
    ab[2, :-1] = off
    rhs = np.zeros(n_trunc + 1, dtype=dtype)
    rhs[0] = 1.0
    psi = solve_banded((1, 1), ab, rhs)
    tail = abs(psi[-1])
    peak = np.max(np.abs(psi))
    if tail > tail_tol * peak:
        raise StabilityError(
            f"psi truncation too small at z={z}: |psi(N)|/max = {tail/peak:.2e} > {tail_tol:.1e}"
        )
    return psi


def psi_vector(z: complex, n_trunc: int, tail_tol: float = 1e-10) -> LatticeVector:
    return LatticeVector(psi_array(z, n_trunc, tail_tol), TAIL_EXPONENTIAL)


def psi_boundary_plus_array(lam: float, n_trunc: int) -> np.ndarray:
    """Upper boundary value psi(lam + i0) = PV psi + i pi e^{-lam} phi."""
    phi = laguerre_phi_array(lam, n_trunc)
    pv = specfun.pv_f(lam) * phi + xi_array(lam, n_trunc)
    return pv + 1j * np.pi * specfun.delta_f(lam) * phi


def pv_psi(lam: float, n_trunc: int) -> LatticeVector:
    """Principal value of the resolvent vector on the cut:
    PV psi_lam = pv_f(lam) phi_lam + xi_lam."""
    if not lam > 0:
        raise ValueError("pv_psi requires lam > 0")
    arr = specfun.pv_f(lam) * laguerre_phi_array(lam, n_trunc) + xi_array(lam, n_trunc)
    return LatticeVector(arr)


def resolvent_kernel_l0(z: complex, x_max: int, n_trunc: int | None = None) -> np.ndarray:
    """Dense kernel R_z(x, y) = phi_z(min) psi_z(max) for x, y <= x_max."""
    n = n_trunc if n_trunc is not None else max(4 * x_max + 200, 600)
    phi = laguerre_phi_array(z, x_max)
    psi = psi_array(z, n)[: x_max + 1]
    xmin = np.minimum.outer(np.arange(x_max + 1), np.arange(x_max + 1))
    xmax = np.maximum.outer(np.arange(x_max + 1), np.arange(x_max + 1))
    return phi[xmin] * psi[xmax]


@dataclass(frozen=True)
class SpectralPoint:
    """One node of the a.c. calculus of L0 at lam >= 0."""

    lam: float
    phi: LatticeVector
    w: float
    pv_f: float
    delta_f: float

    def __post_init__(self):
        if self.phi.values[0] != 1.0:
            raise ValueError("phi must carry the normalization phi(0) = 1")
        if not self.w > 0:
            raise ValueError("spectral weight must be positive")


def spectral_point(lam: float, n_trunc: int) -> SpectralPoint:
    if not lam > 0:
        raise ValueError("spectral_point requires lam > 0")
    return SpectralPoint(
        lam=lam,
        phi=laguerre_phi(lam, n_trunc),
        w=specfun.delta_f(lam),
        pv_f=specfun.pv_f(lam),
        delta_f=specfun.delta_f(lam),
    )


@dataclass(frozen=True)
class SpectralGrid:
    """Composite Gauss-Legendre grid on [0, lam_max], graded toward lam = 0."""

    nodes: np.ndarray
    weights: np.ndarray
    edges: np.ndarray
    nodes_per_panel: int

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")

    @property
    def lam_max(self) -> float:
        return float(self.edges[-1])

    def describe(self) -> str:
        return (
            f"{self.edges.size - 1} panels on [{self.edges[0]:.3g}, {self.edges[-1]:.3g}], "
            f"{self.nodes_per_panel} nodes each, innermost width {self.edges[1] - self.edges[0]:.3g}"
        )

    def refined(self) -> "SpectralGrid":
        """Same layout with every panel split in half (nested check grid)."""
        new_edges = np.empty(2 * self.edges.size - 1)
        new_edges[0::2] = self.edges
        new_edges[1::2] = 0.5 * (self.edges[:-1] + self.edges[1:])
        return _grid_from_edges(new_edges, self.nodes_per_panel)


def _grid_from_edges(edges: np.ndarray, nodes_per_panel: int) -> SpectralGrid:
    xg, wg = np.polynomial.legendre.leggauss(nodes_per_panel)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return SpectralGrid(nodes, weights, np.asarray(edges, dtype=float), nodes_per_panel)


def build_grid(
    lam_max: float,
    lam_min: float = 1e-10,
    coarse_width: float = 1.5,
    nodes_per_panel: int = 16,
    decades_per_panel: int = 1,
) -> SpectralGrid:
    """Geometric panels from lam_min up to 1, then uniform panels to lam_max.

    The geometric grading (node density ~ 1/lam) resolves the logarithmic
    threshold behavior of the principal-value functions; integrands handled
    here vanish fast enough below lam_min for the stub [0, lam_min] to be
    negligible, and nothing is ever evaluated at lam = 0.
    """
    if lam_max <= 1.0:
        raise ValueError("lam_max must exceed 1")
    edges = [lam_min]
    e = lam_min
    ratio = 10.0**decades_per_panel
    while e < 1.0:
        e = min(e * ratio, 1.0)
        edges.append(e)
    n_coarse = int(np.ceil((lam_max - 1.0) / coarse_width))
    edges.extend(np.linspace(1.0, lam_max, n_coarse + 1)[1:])
    return _grid_from_edges(np.array(edges), nodes_per_panel)


def functional_calculus(
    g,
    v: LatticeVector,
    grid: SpectralGrid,
    tol: float | None = None,
) -> tuple[LatticeVector, float]:
    """g(L0) v = int g(lam) e^{-lam} phi_lam (phi_lam, v) dlam on the grid.

    Returns the quadrature value and a nested-grid error estimate (sup-norm
    difference against the half-panel refinement).  If `tol` is given the
    estimate must meet it.
    """
    coarse = _apply_on_grid(g, v, grid)
    fine = _apply_on_grid(g, v, grid.refined())
    err = float(np.max(np.abs(coarse - fine)))
    if tol is not None and err > tol:
        raise QuadratureError(f"nested grids disagree: {err:.3e} > {tol:.1e}")
    return LatticeVector(fine), err


def _apply_on_grid(g, v: LatticeVector, grid: SpectralGrid) -> np.ndarray:
    n = v.n_trunc
    phi = laguerre_phi_grid(grid.nodes, n)
    coef = phi.T @ v.values
    gv = np.asarray(g(grid.nodes), dtype=coef.dtype if np.iscomplexobj(coef) else None)
    dens = grid.weights * np.exp(-grid.nodes) * gv * coef
    return phi @ dens


def completeness_error(grid: SpectralGrid, x_max: int) -> np.ndarray:
    """Matrix int e^{-lam} phi(x) phi(y) dlam - delta_{xy} for x, y <= x_max."""
    phi = laguerre_phi_grid(grid.nodes, x_max)
    dens = grid.weights * np.exp(-grid.nodes)
    gram = (phi * dens) @ phi.T
    return gram - np.eye(x_max + 1)


# -- decay-bound sweep (weighted eigenfunction derivative bounds) -------------

def eigenfunction_decay_report(
    x_max: int = 40,
    lam_max: float = 200.0,
    kappa: float = 2.0,
    n_lam: int = 401,
    fd_step: float = 1e-3,
) -> dict:
    """Check |d^n_lam[w^{1/2} phi_lam(x)]| < 3^{n+1}(x+kappa)^{n+1} e^{-eps lam/16}
    and the companion bounds for xi, n = 0, 1, 2, eps = 1 - [1-(x+kappa)^{-1}]^2.

    Derivatives are central differences with step `fd_step`; every (x, lam, n)
    point is checked and the worst bound ratio is reported.
    """
    lams = np.linspace(0.0, lam_max, n_lam)
    h = fd_step
    xs = np.arange(x_max + 1)
    xk = xs + kappa
    eps = 1.0 - (1.0 - 1.0 / xk) ** 2

    def weighted(f_grid, lam_row):
        return np.sqrt(np.exp(-lam_row))[None, :] * f_grid

    grids = {}
    for tag, shift in (("0", 0.0), ("p", h), ("m", -h)):
        row = lams + shift
        phi = laguerre_phi_grid(row, x_max)
        xi = np.empty_like(phi)
        for j, lam in enumerate(row):
            xi[:, j] = xi_array(float(lam), x_max)
        grids[tag] = (weighted(phi, row), weighted(xi, row))

    report = {"violations": 0, "worst_ratio": 0.0, "points": 0}
    for which, idx in (("phi", 0), ("xi", 1)):
        f0, fp, fm = grids["0"][idx], grids["p"][idx], grids["m"][idx]
        d0 = np.abs(f0)
        d1 = np.abs((fp - fm) / (2 * h))
        d2 = np.abs((fp - 2 * f0 + fm) / h**2)
        for n, dn in enumerate((d0, d1, d2)):
            if which == "phi":
                c = 3.0 ** (n + 1) * xk ** (n + 1)
            else:
                c = {0: 12.0 * xk**2, 1: 24.0 * xk**2, 2: 36.0 * xk**3}[n]
            bound = c[:, None] * np.exp(-eps[:, None] * lams[None, :] / 16.0)
            if which == "xi":  # xi(0) = 0 identically; bound applies to x >= 1
                ratio = dn[1:] / bound[1:]
            else:
                ratio = dn / bound
            report["points"] += ratio.size
            report["violations"] += int(np.sum(ratio >= 1.0))
            report["worst_ratio"] = max(report["worst_ratio"], float(np.max(ratio)))
    return report


def eigen_residual(lam: complex, phi: LatticeVector) -> float:
    """max over interior x of |(L0 phi)(x) - lam phi(x)| / max(1, |phi(x)|)."""
    lv = l0_apply_array(phi.values)
    r = np.abs(lv - lam * phi.values)
    scale = np.maximum(1.0, np.abs(phi.values))
    return float(np.max((r / scale)[:-1]))
