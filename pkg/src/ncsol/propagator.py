"""Weighted dispersive evolution for the localized matrix Hamiltonian H2 and
the full H.

Everything rests on closed boundary values of the resolvent kernel on the two
essential-spectrum branches (-inf, -mu] and [mu, inf).  With lam1 = lam - mu,
lam2 = -lam - mu and q = q1, the resolvent of L = L0 - q1 P0 factorizes
through phi/psi of L0, and the q2 P0 J coupling adds one more rank-one layer:

    R^{H2}(x,y) = diag(R^L_{z1}, -R^L_{z2})
                + q2/det [[ q2 f^L_2 psi1 psi1, -psi1 psi2 ],
                          [ psi2 psi1,          -q2 f^L_1 psi2 psi2 ]],
    det = 1 - q2^2 f^L_{z1} f^L_{z2}   ( = -h(z) ),

where psi_i = psi^L_{z_i}.  On the branch lam >= mu only the z1-side carries
boundary data (PV +- i pi w), so the spectral density delta^{H2}_lam is the
imaginary part of the +i0 kernel over pi; the lam <= -mu branch mirrors with
the z2 roles swapped.  The full H is rebuilt from H2 by resumming the finitely
supported potential difference U through (1 - R^{H2} U)^{-1} on the support
block, which is the convergent-series construction behind the essential
spectral measure of H.

The time integral over each branch uses Filon-type product quadrature exact
for e^{-it lam} x (Legendre polynomials) on graded panels accumulating toward
the thresholds, so the cost is independent of t.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import jv, spherical_jn

from . import specfun
from .errors import NumericalError, QuadratureError, StabilityError
from .lattice import LatticeVector, MatrixVector, WeightSpec, matrix_vector
from .linearized import apply_h_arrays, dense_h
from .soliton import SolitonProfile, dmu_alpha
from .spectral_free import laguerre_phi_array, psi_array, xi_array


def _qs(profile: SolitonProfile) -> tuple[float, float]:
    rho2s = profile.rho ** (2 * profile.sigma)
    return (profile.sigma + 1) * rho2s, profile.sigma * rho2s


# -- boundary data at one branch point -----------------------------------------

class _CutSide:
    """L-objects at lam1 > 0 on the cut: +i0 boundary values."""

    def __init__(self, lam1: float, q1: float, n: int):
        self.lam1 = lam1
        phi0 = laguerre_phi_array(lam1, n)
        xi0 = xi_array(lam1, n)
        pv0 = specfun.pv_f(lam1)
        w0 = specfun.delta_f(lam1)
        self.f_plus0 = complex(pv0, math.pi * w0)           # f_{lam+i0} of L0
        self.psi_plus0 = (pv0 * phi0 + xi0) + 1j * math.pi * w0 * phi0
        self.phi0 = phi0
        den = 1.0 - q1 * self.f_plus0
        self.f_plus = self.f_plus0 / den                    # f^L(lam+i0)
        self.psi_plus = self.psi_plus0 / den                # psi^L(lam+i0)
        self.q1 = q1

    def kernel_apply(self, u: np.ndarray) -> np.ndarray:
        """[R^L_{lam+i0} u](x) for a (short) vector u, x < len(psi_plus)."""
        n = self.psi_plus.size
        uu = np.zeros(n, dtype=complex)
        uu[: u.size] = u
        # free part phi(min) psi(max) via cumulative sums
        a = np.cumsum(self.phi0 * uu)                       # sum_{y<=x} phi u
        b_rev = np.cumsum((self.psi_plus0 * uu)[::-1])[::-1]
        b = np.concatenate([b_rev[1:], [0.0]])              # sum_{y>x} psi u
        free = self.psi_plus0 * a + self.phi0 * b
        rank1 = self.q1 * self.psi_plus0 * (self.psi_plus0 @ uu) / (1.0 - self.q1 * self.f_plus0)
        return free + rank1


class _RealSide:
    """L-objects at a real z < 0 off the spectrum of L."""

    def __init__(self, z: float, q1: float, n: int):
        self.z = z
        self.psi0 = psi_array(z, n, tail_tol=1e-9)
        self.phi0 = laguerre_phi_array(z, n)
        self.f0 = float(self.psi0[0])
        den = 1.0 - q1 * self.f0
        if abs(den) < 1e-12:
            raise NumericalError(f"z = {z} hits the bound state of L")
        self.f = self.f0 / den
        self.psi = self.psi0 / den
        self.q1 = q1

    def kernel_apply(self, u: np.ndarray) -> np.ndarray:
        n = self.psi0.size
        uu = np.zeros(n, dtype=u.dtype)
        uu[: u.size] = u
        a = np.cumsum(self.phi0 * uu)
        b_rev = np.cumsum((self.psi0 * uu)[::-1])[::-1]
        b = np.concatenate([b_rev[1:], [0.0]])
        free = self.psi0 * a + self.phi0 * b
        rank1 = self.q1 * self.psi0 * (self.psi0 @ uu) / (1.0 - self.q1 * self.f0)
        return free + rank1


class BranchPoint:
    """Boundary kernel of R^{H2} at lam = +s and lam = -s (s >= mu strictly),
    sharing one set of ingredients.

    Orientation: at lam = +s the cut side is z1 = s - mu (+i0) and the real
    side z2 = -s - mu; at lam = -s they swap blocks with the z2 boundary
    approached from below (the +i0 limit in lam).
    """

    def __init__(self, s: float, profile: SolitonProfile, n: int):
        if not s > profile.mu:
            raise ValueError("branch points are strictly beyond the threshold")
        self.s = s
        self.mu = profile.mu
        self.q1, self.q2 = _qs(profile)
        self.cut = _CutSide(s - profile.mu, self.q1, n)
        self.real = _RealSide(-s - profile.mu, self.q1, n)

    # -- kernel applications at lam = +s, upper boundary ----------------------
    def r_plus_apply(self, vu: np.ndarray, vl: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """R^{H2}_{s+i0} applied to a compact (upper, lower) pair."""
        q2 = self.q2
        fl1, fl2 = self.cut.f_plus, self.real.f
        det = 1.0 - q2**2 * fl1 * fl2
        psi1, psi2 = self.cut.psi_plus, self.real.psi
        s1u = psi1[: vu.size] @ vu                  # (psi^L_{z1}, vu) plain
        s2l = psi2[: vl.size] @ vl
        out_u = self.cut.kernel_apply(vu).astype(complex)
        out_l = -self.real.kernel_apply(vl).astype(complex)
        out_u += (q2 / det) * (q2 * fl2 * s1u * psi1 - s2l * psi1)
        out_l += (q2 / det) * (s1u * psi2 - q2 * fl1 * s2l * psi2)
        return out_u, out_l

    def r_minus_apply(self, vu, vl):
        """R^{H2}_{s-i0}: conjugate boundary data (computed independently)."""
        q2 = self.q2
        fl1 = np.conj(self.cut.f_plus)
        fl2 = self.real.f
        det = 1.0 - q2**2 * fl1 * fl2
        psi1 = np.conj(self.cut.psi_plus)
        psi2 = self.real.psi
        s1u = psi1[: vu.size] @ vu
        s2l = psi2[: vl.size] @ vl
        out_u = np.conj(self.cut.kernel_apply(np.conj(vu))).astype(complex)
        out_l = -self.real.kernel_apply(vl).astype(complex) + 0j
        out_u += (q2 / det) * (q2 * fl2 * s1u * psi1 - s2l * psi1)
        out_l += (q2 / det) * (s1u * psi2 - q2 * fl1 * s2l * psi2)
        return out_u, out_l

    def r_plus_apply_mirror(self, vu: np.ndarray, vl: np.ndarray):
        """R^{H2}_{-s+i0}: block roles swap; the cut side (at lam2 = s - mu)
        is approached from below, the z1 side (= -s - mu) is real."""
        q2 = self.q2
        fl1 = self.real.f                            # f^L at z1 = -s - mu
        fl2 = np.conj(self.cut.f_plus)               # f^L(lam2 - i0)
        det = 1.0 - q2**2 * fl1 * fl2
        psi1 = self.real.psi
        psi2 = np.conj(self.cut.psi_plus)
        s1u = psi1[: vu.size] @ vu
        s2l = psi2[: vl.size] @ vl
        out_u = self.real.kernel_apply(vu).astype(complex) + 0j
        out_l = -np.conj(self.cut.kernel_apply(np.conj(vl))).astype(complex)
        out_u += (q2 / det) * (q2 * fl2 * s1u * psi1 - s2l * psi1)
        out_l += (q2 / det) * (s1u * psi2 - q2 * fl1 * s2l * psi2)
        return out_u, out_l

    def density_apply(self, sign: int, vu: np.ndarray, vl: np.ndarray):
        """delta^{H2}_{sign*s} applied to (vu, vl): Im(+i0 kernel)/pi."""
        if sign > 0:
            ou, ol = self.r_plus_apply(vu, vl)
        else:
            ou, ol = self.r_plus_apply_mirror(vu, vl)
        return ou.imag / math.pi, ol.imag / math.pi


@dataclass(frozen=True)
class BlockKernel:
    """Dense spectral-density block entries at one branch point."""

    lam: float
    entries: dict
    scalars: dict

    def block(self, tag: str) -> np.ndarray:
        return self.entries[tag]


def h2_spectral_density(
    lam: float, x_max: int, profile: SolitonProfile, cancel_tol: float = 1e-8
) -> BlockKernel:
    """delta^{H2}_lam(x, y) for x, y <= x_max, |lam| > mu.

    Assembled from two independent boundary evaluations (lam +- i0); the
    difference over 2 pi i must come out real, and the leftover imaginary
    part (the collected non-canceling piece) is asserted below cancel_tol.
    """
    if abs(lam) <= profile.mu:
        raise ValueError("spectral density lives on |lam| > mu")
    n = max(4 * x_max + 120, 240)
    bp = BranchPoint(abs(lam), profile, n)
    sign = 1 if lam > 0 else -1
    m = x_max + 1
    plus = np.empty((2 * m, 2 * m), dtype=complex)
    minus = np.empty((2 * m, 2 * m), dtype=complex)
    eye = np.eye(m)
    for y in range(m):
        for (vu, vl), col in (((eye[y], np.zeros(m)), y), ((np.zeros(m), eye[y]), m + y)):
            if sign > 0:
                pu, pl = bp.r_plus_apply(vu, vl)
                mu_, ml_ = bp.r_minus_apply(vu, vl)
            else:
                pu, pl = bp.r_plus_apply_mirror(vu, vl)
                # lower boundary at -s: conjugate data, evaluated independently
                mu_, ml_ = bp.r_plus_apply_mirror(np.conj(vu), np.conj(vl))
                mu_, ml_ = np.conj(mu_), np.conj(ml_)
            plus[:m, col] = pu[:m]
            plus[m:, col] = pl[:m]
            minus[:m, col] = mu_[:m]
            minus[m:, col] = ml_[:m]
    dens = (plus - minus) / (2j * math.pi)
    scale = np.max(np.abs(dens)) + 1e-300
    resid = np.max(np.abs(dens.imag)) / scale
    if resid > cancel_tol:
        raise NumericalError(f"real-part cancellation failed: {resid:.2e}")
    d = dens.real
    entries = {"11": d[:m, :m], "12": d[:m, m:], "21": d[m:, :m], "22": d[m:, m:]}
    q1, q2 = _qs(profile)
    lam1 = abs(lam) - profile.mu
    scalars = {
        "q2": q2,
        "f_L_z2": bp.real.f,
        "pv_f_L_lam1": bp.cut.f_plus.real,
        "w_L_lam1": bp.cut.f_plus.imag / math.pi,
        "g_hat": 1.0 / abs(1.0 - q2**2 * bp.cut.f_plus * bp.real.f) ** 2,
        "lam1": lam1,
    }
    return BlockKernel(lam=lam, entries=entries, scalars=scalars)


def truncated_block_resolvent_columns(
    z: complex, profile: SolitonProfile, which: str, n: int, x_max: int
) -> np.ndarray:
    """(A_N - z)^{-1} columns for chi_x in both blocks, x <= x_max, on a hard
    truncation; interleaving components keeps the matrix pentadiagonal."""
    mu, sigma = profile.mu, profile.sigma
    q1, q2 = _qs(profile)
    dim = 2 * (n + 1)
    ab = np.zeros((5, dim), dtype=complex)
    x = np.arange(n + 1, dtype=float)
    diag_u = 2 * x + 1 + mu
    pot_d = np.zeros(n + 1)
    pot_j = np.zeros(n + 1)
    if which == "H2":
        pot_d[0] = q1
        pot_j[0] = q2
    elif which == "H":
        a2s = _alpha_pow_local(profile, n)
        pot_d = (sigma + 1) * a2s
        pot_j = sigma * a2s
    else:
        raise ValueError("which must be H2 or H")
    ab[2, 0::2] = diag_u - pot_d - z
    ab[2, 1::2] = -(diag_u - pot_d) - z
    # L0 off-diagonal chains
    j_even = np.arange(2, dim, 2)
    ab[0, j_even] = -(j_even / 2)
    j_odd = np.arange(3, dim, 2)
    ab[0, j_odd] = (j_odd - 1) / 2
    ab[4, 0 : dim - 2 : 2] = -(np.arange(0, n) + 1.0)
    ab[4, 1 : dim - 2 : 2] = np.arange(0, n) + 1.0
    # J-type coupling between components at one site
    ab[1, 1::2] = -pot_j
    ab[3, 0::2][: n + 1] = pot_j
    rhs = np.zeros((dim, 2 * (x_max + 1)), dtype=complex)
    for xx in range(x_max + 1):
        rhs[2 * xx, xx] = 1.0
        rhs[2 * xx + 1, x_max + 1 + xx] = 1.0
    sol = solve_banded((2, 2), ab, rhs)
    # return in block layout (2(n+1), 2(x_max+1)): rows [upper; lower]
    out = np.empty((dim, 2 * (x_max + 1)), dtype=complex)
    out[: n + 1] = sol[0::2]
    out[n + 1 :] = sol[1::2]
    return out


def _alpha_pow_local(profile: SolitonProfile, n: int) -> np.ndarray:
    a2s = np.zeros(n + 1)
    m = min(n + 1, profile.alpha.values.size)
    a2s[:m] = profile.alpha.values[:m] ** (2 * profile.sigma)
    return a2s


# -- discrete spectral projection ----------------------------------------------

def discrete_eigenpair(profile: SolitonProfile, n: int, b_star: float | None = None):
    """Right eigenvector of H2 at +i b* (the -i b* one is its conjugate)."""
    from .linearized import DispersionFunction, find_imaginary_roots

    q1, q2 = _qs(profile)
    if b_star is None:
        b_star, _ = find_imaginary_roots(DispersionFunction.from_profile(profile))
    z1 = 1j * b_star - profile.mu
    z2 = -1j * b_star - profile.mu
    f1 = specfun.f_resolvent(z1).value
    psi1 = psi_array(z1, n) / (1.0 - q1 * f1)
    f1l = f1 / (1.0 - q1 * f1)
    f2 = specfun.f_resolvent(z2).value
    psi2 = psi_array(z2, n) / (1.0 - q1 * f2)
    upper = q2 * psi1
    lower = q2**2 * f1l * psi2
    return b_star, upper, lower


def riesz_projection_apply(
    profile: SolitonProfile, vu: np.ndarray, vl: np.ndarray, pair=None
) -> tuple[np.ndarray, np.ndarray]:
    """P_d v for H2 via the biorthogonal pair at +-i b*; P_e = I - P_d."""
    n = vu.size - 1
    if pair is None:
        _, uu, ul = discrete_eigenpair(profile, n)
    else:
        uu, ul = pair
    # plain bilinear pairing with the D-flipped vector (left eigenvectors)
    def proj(uu_, ul_):
        num = uu_ @ vu - ul_ @ vl
        den = uu_ @ uu_ - ul_ @ ul_
        return num / den

    c_plus = proj(uu, ul)
    c_minus = proj(np.conj(uu), np.conj(ul))
    ou = c_plus * uu + c_minus * np.conj(uu)
    ol = c_plus * ul + c_minus * np.conj(ul)
    return ou, ol


def kernel_projection_apply(profile: SolitonProfile, vu, vl, d_alpha=None):
    """P_d for the full H: projection onto the generalized kernel span
    {(a, -a), (d_mu a, d_mu a)} biorthogonal to its D-flip."""
    n = vu.size
    a = np.zeros(n)
    m = min(n, profile.alpha.values.size)
    a[:m] = profile.alpha.values[:m]
    if d_alpha is None:
        d_alpha = dmu_alpha(profile.mu, profile.sigma, richardson=True)
    da = np.zeros(n)
    md = min(n, d_alpha.values.size)
    da[:md] = d_alpha.values[:md]
    k = np.stack([np.concatenate([a, -a]), np.concatenate([da, da])], axis=1)
    dk = np.stack([np.concatenate([a, a]), np.concatenate([da, -da])], axis=1)
    v = np.concatenate([vu, vl])
    gram = dk.T @ k
    coef = np.linalg.solve(gram, dk.T @ v)
    out = k @ coef
    return out[:n], out[n:]


# -- graded Filon quadrature over the branches ---------------------------------

@dataclass(frozen=True)
class BranchGrid:
    """Panels on [mu + off0, mu + lam_span], geometric toward the threshold."""

    edges: np.ndarray          # offsets from the threshold, increasing
    nodes_per_panel: int

    @classmethod
    def build(
        cls,
        lam_span: float = 60.0,
        inner_offset: float = 1e-10,
        coarse_width: float = 1.0,
        nodes_per_panel: int = 14,
        panels_per_decade: int = 1,
    ) -> "BranchGrid":
        edges = [inner_offset]
        e = inner_offset
        ratio = 10.0 ** (1.0 / panels_per_decade)
        while e < 1.0:
            e = min(e * ratio, 1.0)
            edges.append(e)
        n_coarse = int(np.ceil((lam_span - 1.0) / coarse_width))
        edges.extend(np.linspace(1.0, lam_span, n_coarse + 1)[1:])
        return cls(np.array(edges), nodes_per_panel)

    def refined(self) -> "BranchGrid":
        new = np.empty(2 * self.edges.size - 1)
        new[0::2] = self.edges
        new[1::2] = 0.5 * (self.edges[:-1] + self.edges[1:])
        return BranchGrid(new, self.nodes_per_panel)

    def panels(self):
        return zip(self.edges[:-1], self.edges[1:])


class SpectralPropagator:
    """Precomputed branch densities for W e^{-itA} P_e W v, A in {H2, H}.

    All t-dependence sits in scalar Filon moments, so arbitrary time grids
    cost nothing once the per-node densities are assembled.
    """

    def __init__(
        self,
        profile: SolitonProfile,
        v: MatrixVector,
        weight: WeightSpec,
        which: str = "H2",
        x_out: int = 120,
        grid: BranchGrid | None = None,
        enforce_weight_contract: bool = True,
    ):
        if enforce_weight_contract and not (weight.tau <= -3.0 and weight.kappa > 1.0):
            raise ValueError("decay estimates need tau <= -3 and kappa > 1")
        if which not in ("H2", "H"):
            raise ValueError("which must be H2 or H")
        self.profile = profile
        self.weight = weight
        self.which = which
        self.x_out = x_out
        self.grid = grid if grid is not None else BranchGrid.build()
        win = weight.profile(v.n_trunc)
        self.vu = win * v.upper.values
        self.vl = win * v.lower.values
        if np.max(np.abs(np.concatenate([self.vu[-3:], self.vl[-3:]]))) > 0:
            raise ValueError("input vector must be compactly supported inside its truncation")
        self.w_out = weight.profile(x_out)
        self._assemble()

    # -- per-node densities ---------------------------------------------------
    def _u_block(self):
        profile, sigma = self.profile, self.profile.sigma
        a2s = profile.alpha.values ** (2 * sigma)
        m = int(np.searchsorted(-a2s, -1e-22 * a2s[0]))
        m = max(2, min(m, a2s.size - 1))
        pot = a2s[1 : m + 1]
        u = np.zeros((2 * (m + 1), 2 * (m + 1)))
        for i, p in enumerate(pot, start=1):
            u[i, i] = -(sigma + 1) * p
            u[i, i + m + 1] = -sigma * p
            u[i + m + 1, i] = sigma * p
            u[i + m + 1, i + m + 1] = (sigma + 1) * p
        return m, u

    def _density_at(self, s: float, bp_n: int):
        bp = BranchPoint(s, self.profile, bp_n)
        out = {}
        if self.which == "H2":
            for sign in (1, -1):
                if sign > 0:
                    ou, ol = bp.r_plus_apply(self.vu, self.vl)
                else:
                    ou, ol = bp.r_plus_apply_mirror(self.vu, self.vl)
                out[sign] = np.stack([ou[: self.x_out + 1].imag, ol[: self.x_out + 1].imag]) / math.pi
            return out
        # full H: resum the localized potential difference U on its support
        m, ublock = self._u_block()
        mm = m + 1
        eye = np.eye(2 * mm)
        for sign in (1, -1):
            apply_r = bp.r_plus_apply if sign > 0 else bp.r_plus_apply_mirror
            ru, rl = apply_r(self.vu, self.vl)
            # columns of R^{H2} on the support block
            cols = np.empty((2 * mm, 2 * mm), dtype=complex)
            for y in range(mm):
                cu, cl = apply_r(eye[y][:mm], np.zeros(mm))
                cols[:mm, y] = cu[:mm]
                cols[mm:, y] = cl[:mm]
                cu, cl = apply_r(np.zeros(mm), eye[y][:mm])
                cols[:mm, y + mm] = cu[:mm]
                cols[mm:, y + mm] = cl[:mm]
            rv = np.concatenate([ru[:mm], rl[:mm]])
            try:
                corr = np.linalg.solve(eye - cols @ ublock, rv) - rv
            except np.linalg.LinAlgError as exc:  # pragma: no cover
                raise NumericalError(f"U-resummation singular at lam={sign*s}") from exc
            src = ublock @ (rv + corr)
            au, al = apply_r(src[:mm], src[mm:])
            ou = ru + au
            ol = rl + al
            out[sign] = np.stack([ou[: self.x_out + 1].imag, ol[: self.x_out + 1].imag]) / math.pi
        return out

    def _assemble(self):
        mu = self.profile.mu
        npanel = self.grid.nodes_per_panel
        xg, wg = np.polynomial.legendre.leggauss(npanel)
        kmax = npanel - 1
        # Legendre coefficient extraction matrix: c_k = (2k+1)/2 sum w P_k(x) f
        pk = np.stack([np.polynomial.legendre.Legendre.basis(k)(xg) for k in range(kmax + 1)])
        self._coef_mat = (np.arange(kmax + 1)[:, None] + 0.5) * (pk * wg[None, :])
        self._kmax = kmax
        self.mids, self.halfs = [], []
        coeffs = {1: [], -1: []}
        bp_n = max(4 * self.x_out + 120, 240)
        for a, b in self.grid.panels():
            mid, half = mu + 0.5 * (a + b), 0.5 * (b - a)
            self.mids.append(mid)
            self.halfs.append(half)
            f_nodes = {1: [], -1: []}
            for u in xg:
                dens = self._density_at(mid - mu + half * u + mu, bp_n)
                f_nodes[1].append(dens[1])
                f_nodes[-1].append(dens[-1])
            for sign in (1, -1):
                farr = np.stack(f_nodes[sign])          # (nodes, 2, x_out+1)
                coeffs[sign].append(np.einsum("kj,jab->kab", self._coef_mat, farr))
        self.mids = np.array(self.mids)
        self.halfs = np.array(self.halfs)
        self.coeffs = {s: np.stack(coeffs[s]) for s in (1, -1)}  # (panel, k, 2, X)

    def tail_estimate(self) -> float:
        """Magnitude of the outermost panel's density (cutoff control)."""
        return float(np.max(np.abs(self.coeffs[1][-1])) + np.max(np.abs(self.coeffs[-1][-1])))

    def evolve(self, t: float) -> MatrixVector:
        """W integral_{branches} e^{-it lam} delta_lam (W v) dlam."""
        k = np.arange(self._kmax + 1)
        out = np.zeros((2, self.x_out + 1), dtype=complex)
        for sign in (1, -1):
            omega = t * self.halfs * sign  # lam = sign*(mid + half u)
            jk = spherical_jn(k[None, :].repeat(len(self.mids), 0), np.abs(omega)[:, None])
            # j_k(-w) = (-1)^k j_k(w)
            sgn = np.where(omega[:, None] >= 0, 1.0, (-1.0) ** k[None, :])
            mom = 2.0 * (-1j) ** k[None, :] * jk * sgn
            phase = np.exp(-1j * t * sign * self.mids) * self.halfs
            out += np.einsum("p,pk,pkab->ab", phase, mom, self.coeffs[sign])
        wout = self.w_out[None, :] * out
        return matrix_vector(wout[0], wout[1])

    def sup_norm(self, t: float) -> float:
        return self.evolve(t).norm_linf()


# -- independent ODE evolution (Chebyshev propagator) ---------------------------

def _spectral_radius_bound(n: int, mu: float, q1: float, q2: float) -> float:
    return 4.0 * (n + 1) + mu + q1 + q2 + 2.0


def evolve_ode(
    t_values,
    v: MatrixVector,
    which: str,
    profile: SolitonProfile,
    project_discrete: bool = True,
    boundary_tol: float = 1e-8,
    cheb_tol: float = 1e-11,
) -> list[MatrixVector]:
    """e^{-itA} v on a hard truncation by a Chebyshev expansion of the
    exponential (cost ~ ||A|| t matrix applications, one shot per t).

    The discrete component is projected out first when requested: for H2 the
    +-i b* pair would grow like e^{b* t}, for H the Jordan block at 0 grows
    linearly.  A boundary monitor rejects times where outgoing radiation
    reaches the truncation edge above `boundary_tol` in relative l2 mass.
    """
    mu, sigma = profile.mu, profile.sigma
    q1, q2 = _qs(profile)
    n = v.n_trunc
    vu = v.upper.values.astype(complex)
    vl = v.lower.values.astype(complex)
    if project_discrete and which == "H2":
        pu, pl = riesz_projection_apply(profile, vu, vl)
        vu, vl = vu - pu, vl - pl
    elif project_discrete and which == "H":
        pu, pl = kernel_projection_apply(profile, vu.real, vl.real)
        pu2, pl2 = kernel_projection_apply(profile, vu.imag, vl.imag)
        vu = vu - (pu + 1j * pu2)
        vl = vl - (pl + 1j * pl2)
    radius = _spectral_radius_bound(n, mu, q1, q2) if which != "L0" else 4.0 * (n + 1) + 2.0

    def apply_a(u):
        if which == "L0":
            from .lattice import l0_apply_array

            return np.concatenate([l0_apply_array(u[: n + 1]), np.zeros(n + 1)])
        au, al = apply_h_arrays(which, u[: n + 1], u[n + 1 :], mu, sigma, profile)
        return np.concatenate([au, al])

    w0 = np.concatenate([vu, vl])
    out = []
    for t in np.atleast_1d(t_values):
        tau = radius * float(t)
        kmax = int(tau + 12.0 * tau ** (1.0 / 3.0) + 40) if tau > 0 else 1
        ks = np.arange(kmax + 1)
        coef = 2.0 * (-1j) ** ks * jv(ks, tau)
        coef[0] /= 2.0
        keep = np.abs(coef) > cheb_tol
        kmax_eff = int(np.max(np.nonzero(keep)[0])) if np.any(keep) else 1
        tkm1 = w0.copy()
        tk = apply_a(w0) / radius
        acc = coef[0] * tkm1 + coef[1] * tk
        for k in range(2, kmax_eff + 1):
            tkp1 = 2.0 * apply_a(tk) / radius - tkm1
            acc += coef[k] * tkp1
            tkm1, tk = tk, tkp1
        uu, ll = acc[: n + 1], acc[n + 1 :]
        edge = math.sqrt(
            float(np.sum(np.abs(uu[-10:]) ** 2 + np.abs(ll[-10:]) ** 2))
        ) / (np.linalg.norm(acc) + 1e-300)
        if edge > boundary_tol:
            raise StabilityError(
                f"boundary contamination at t={t}: edge mass {edge:.2e}; largest safe t "
                f"is below this horizon for N={n}"
            )
        out.append(matrix_vector(uu, ll))
    return out


def safe_horizon(n: int, lam_cut: float) -> float:
    """Ballistic front estimate: a mode at energy lam reaches site lam t^2."""
    return math.sqrt(n / lam_cut)


# -- decay fit -------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    ts: np.ndarray
    s_values: np.ndarray
    product: np.ndarray        # t log^2 t * s(t)
    c_fit: float               # median of the product over the top decade
    flatness: float            # max/min of the product over the window

    def to_json(self) -> str:
        return json.dumps(
            {
                "c_fit": self.c_fit,
                "flatness": self.flatness,
                "t_min": float(self.ts[0]),
                "t_max": float(self.ts[-1]),
                "n_samples": int(self.ts.size),
            },
            indent=2,
            sort_keys=True,
        )

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "s", "t_log2t_s"])
            for t, s, p in zip(self.ts, self.s_values, self.product):
                wr.writerow([format(t, ".17g"), format(s, ".17g"), format(p, ".17g")])


def decay_fit(prop: SpectralPropagator, ts) -> DecayFit:
    ts = np.asarray(ts, dtype=float)
    if np.any(ts <= 1.0):
        raise ValueError("decay window must start beyond t = 1")
    svals = np.array([prop.sup_norm(float(t)) for t in ts])
    product = ts * np.log(ts) ** 2 * svals
    top = ts >= ts[-1] / 10.0
    c_fit = float(np.median(product[top]))
    flatness = float(np.max(product) / np.min(product))
    return DecayFit(ts=ts, s_values=svals, product=product, c_fit=c_fit, flatness=flatness)


# -- Duhamel / Gronwall transfer --------------------------------------------------

def gronwall_kernel(t, c3: float = math.e):
    t = np.asarray(t, dtype=float)
    return 1.0 / ((t + c3) * np.log(t + c3) ** 2)


def convolution_bound_check(t_max: float = 200.0, n: int = 4001) -> dict:
    """int_0^t g(s) g(t-s) ds <= c6 g(t) verified on a grid."""
    ts = np.linspace(0.0, t_max, n)
    g = gronwall_kernel(ts)
    dt = ts[1] - ts[0]
    ratios = []
    for i in range(1, n):
        conv = np.trapezoid(g[: i + 1] * g[i::-1], dx=dt)
        ratios.append(conv / g[i])
    c6 = float(np.max(ratios))
    return {"c6": c6, "ok": np.isfinite(c6) and c6 > 0}


def duhamel_transfer(
    profile: SolitonProfile,
    v: MatrixVector,
    weight: WeightSpec,
    ts_ode,
    n_trunc: int = 4000,
) -> dict:
    """Direct evolution under H checked against the Gronwall majorant built
    from the localized-dynamics kernel g(t) = [(t+e) log^2(t+e)]^{-1}."""
    from .linearized import LinearizedOperator

    states = evolve_ode(ts_ode, v, "H", profile, project_discrete=True)
    win = weight.profile(v.n_trunc)
    f_vals = np.array([float(np.sum(np.abs(win * s.upper.values)) + np.sum(np.abs(win * s.lower.values))) for s in states])
    ts = np.asarray(ts_ode, dtype=float)
    g_vals = gronwall_kernel(ts)
    c2 = float(np.max(f_vals / g_vals))
    lin = LinearizedOperator(profile.mu, profile.sigma, profile, "H")
    # ||W^-2 U||: the potential is diagonal in x, so this is exact
    a2s = profile.alpha.values ** (2 * profile.sigma)
    wprof = weight.profile(profile.alpha.values.size - 1)
    c4 = (2 * profile.sigma + 1) * float(np.max(a2s[1:] / wprof[1:] ** 2))
    # Gronwall majorant with the fitted constants
    ok = True
    margin = []
    for i, t in enumerate(ts):
        if i == 0:
            continue
        conv = np.trapezoid(gronwall_kernel(t - ts[: i + 1]) * f_vals[: i + 1], ts[: i + 1])
        maj = c2 * g_vals[i] + c2 * c4 * conv
        margin.append(maj / f_vals[i] if f_vals[i] > 0 else np.inf)
        if f_vals[i] > maj * (1.0 + 1e-9):
            ok = False
    return {
        "ok": ok,
        "c2": c2,
        "c4": c4,
        "min_margin": float(np.min(margin)) if margin else float("inf"),
        "f": f_vals,
        "ts": ts,
        "u_norm": lin.u_norm_exact(),
    }
