"""The matrix Hamiltonians obtained by linearizing the lattice NLS at a soliton.

With q1 = (sigma+1) rho^{2 sigma}, q2 = sigma rho^{2 sigma} and
L = L0 - q1 P0:

    H0 = (L0 + mu) D
    H1 = H0 - q1 P0 D
    H2 = H1 - q2 P0 J          (site-0 localization of the full potential)
    H  = (L0 + mu) D - (sigma+1) alpha^{2s} D - sigma alpha^{2s} J

H2 and H are not self-adjoint but D-pseudo-Hermitian (H^adj = D H D), so
their spectra live on R union iR.  The point spectrum of H2 is located by the
dispersion function h(z) = q2^2 f^L_{z-mu} f^L_{-z-mu} - 1; H has a Jordan
block of algebraic multiplicity 2 at the origin spanned by (alpha, -alpha)
and (d_mu alpha, d_mu alpha).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq

from . import rank_one as ro
from . import specfun
from .errors import NumericalError
from .lattice import MatrixVector, LatticeVector, l0_apply_array, l0_dense, l0_diagonals
from .soliton import SolitonProfile, dmu_alpha, solve as solve_soliton

WHICH = ("H0", "H1", "H2", "H")


@dataclass(frozen=True)
class LinearizedOperator:
    """Parameters and potentials of one of H0, H1, H2, H."""

    mu: float
    sigma: int
    profile: SolitonProfile
    which: str

    def __post_init__(self):
        if self.which not in WHICH:
            raise ValueError(f"which must be one of {WHICH}")

    @property
    def q1(self) -> float:
        return (self.sigma + 1) * self.profile.rho ** (2 * self.sigma)

    @property
    def q2(self) -> float:
        return self.sigma * self.profile.rho ** (2 * self.sigma)

    @property
    def m_mu(self) -> float:
        """Bound 2(2s+1) mu^{-(2s-1)/(2s)} (1 + 2t) on the localization error
        ||U|| = ||H - H2||."""
        t = self.mu ** (-(2 * self.sigma - 1) / (2 * self.sigma))
        return 2 * (2 * self.sigma + 1) * t * (1.0 + 2.0 * t)

    def u_norm_exact(self) -> float:
        """||U||_op = (2s+1) max_{x>=1} alpha(x)^{2s} (largest singular value
        of the site-wise 2x2 symbol)."""
        a = self.profile.alpha.values
        return (2 * self.sigma + 1) * float(np.max(a[1:] ** (2 * self.sigma)))


def _alpha_pow(profile: SolitonProfile, sigma: int, n: int) -> np.ndarray:
    a2s = np.zeros(n + 1)
    m = min(n + 1, profile.alpha.values.size)
    a2s[:m] = profile.alpha.values[:m] ** (2 * sigma)
    return a2s


def apply_h_arrays(
    which: str, u: np.ndarray, w: np.ndarray, mu: float, sigma: int, profile: SolitonProfile
) -> tuple[np.ndarray, np.ndarray]:
    """Block action on raw (upper, lower) arrays."""
    lu = l0_apply_array(u) + mu * u
    lw = l0_apply_array(w) + mu * w
    out_u, out_w = lu, -lw
    if which == "H0":
        return out_u, out_w
    rho2s = profile.rho ** (2 * sigma)
    q1, q2 = (sigma + 1) * rho2s, sigma * rho2s
    if which in ("H1", "H2"):
        out_u = out_u.copy()
        out_w = out_w.copy()
        out_u[0] -= q1 * u[0]
        out_w[0] += q1 * w[0]
        if which == "H2":
            out_u[0] -= q2 * w[0]
            out_w[0] += q2 * u[0]
        return out_u, out_w
    # full H: multiplicative potentials
    a2s = _alpha_pow(profile, sigma, u.size - 1)
    out_u = out_u - (sigma + 1) * a2s * u - sigma * a2s * w
    out_w = out_w + (sigma + 1) * a2s * w + sigma * a2s * u
    return out_u, out_w


def apply_h(which: str, v: MatrixVector, mu: float, sigma: int, profile: SolitonProfile) -> MatrixVector:
    if v.n_trunc + 1 < profile.alpha.values.size and which == "H":
        raise ValueError("vector truncation must reach the soliton truncation")
    ou, ow = apply_h_arrays(which, v.upper.values, v.lower.values, mu, sigma, profile)
    return MatrixVector(LatticeVector(ou), LatticeVector(ow))


def dense_h(which: str, n: int, mu: float, sigma: int, profile: SolitonProfile) -> np.ndarray:
    """Dense 2(n+1) x 2(n+1) block matrix [[A, B], [-B, -A]]."""
    base = l0_dense(n) + mu * np.eye(n + 1)
    rho2s = profile.rho ** (2 * sigma)
    q1, q2 = (sigma + 1) * rho2s, sigma * rho2s
    a = base.copy()
    b = np.zeros((n + 1, n + 1))
    if which in ("H1", "H2"):
        a[0, 0] -= q1
        if which == "H2":
            b[0, 0] = -q2
    elif which == "H":
        a2s = _alpha_pow(profile, sigma, n)
        a -= (sigma + 1) * np.diag(a2s)
        b = -sigma * np.diag(a2s)
    return np.block([[a, b], [-b, -a]])


def kernel_identities(profile: SolitonProfile, d_alpha: LatticeVector | None = None) -> dict:
    """Residuals of H(alpha, -alpha) = 0 and H(da, da) = -(alpha, -alpha)."""
    mu, sigma = profile.mu, profile.sigma
    a = profile.alpha.values
    ku, kw = apply_h_arrays("H", a, -a, mu, sigma, profile)
    res_phase = max(np.max(np.abs(ku[:-1])), np.max(np.abs(kw[:-1])))
    da = d_alpha if d_alpha is not None else dmu_alpha(mu, sigma, richardson=True)
    d = da.values[: a.size]
    ju, jw = apply_h_arrays("H", d, d, mu, sigma, profile)
    res_scale = max(np.max(np.abs(ju + a)[:-1]), np.max(np.abs(jw - a)[:-1]))
    return {
        "phase_residual": float(res_phase),
        "scaling_residual": float(res_scale),
        "rho": profile.rho,
        "phase_scale": profile.rho ** (2 * profile.sigma + 1),
    }


@dataclass(frozen=True)
class DispersionFunction:
    """h(z) = q2^2 f^L_{z-mu} f^L_{-z-mu} - 1 and its factorized companions."""

    mu: float
    sigma: int
    q1: float
    q2: float

    @classmethod
    def from_profile(cls, profile: SolitonProfile) -> "DispersionFunction":
        rho2s = profile.rho ** (2 * profile.sigma)
        return cls(profile.mu, profile.sigma, (profile.sigma + 1) * rho2s, profile.sigma * rho2s)

    @property
    def rho2s(self) -> float:
        return self.q1 / (self.sigma + 1)

    @property
    def c0(self) -> float:
        return 1.0 / ((2 * self.sigma + 1) * self.rho2s**2)

    @property
    def c1(self) -> float:
        return (self.sigma + 1) / ((2 * self.sigma + 1) * self.rho2s)

    @property
    def c2(self) -> float:
        return self.c1**2 - self.c0

    def f_l(self, z: complex) -> complex:
        return ro.f_perturbed(z, self.q1)

    def h(self, z: complex) -> complex:
        z = complex(z)
        return self.q2**2 * self.f_l(z - self.mu) * self.f_l(-z - self.mu) - 1.0

    def h0(self, z: complex) -> complex:
        z = complex(z)
        f1 = specfun.f_resolvent(z - self.mu).value
        f2 = specfun.f_resolvent(-z - self.mu).value
        return (
            (2 * self.sigma + 1)
            * self.rho2s**2
            / ((self.q1 * f1 - 1.0) * (self.q1 * f2 - 1.0))
        )

    def h1(self, z: complex) -> complex:
        z = complex(z)
        f1 = specfun.f_resolvent(z - self.mu).value
        f2 = specfun.f_resolvent(-z - self.mu).value
        return (f1 - self.c1) * (f2 - self.c1)

    def h_alt_form(self, z: complex) -> complex:
        """h0 (c2 - h1): must agree with h identically."""
        return self.h0(z) * (self.c2 - self.h1(z))

    def h_origin(self) -> float:
        return float(np.real(self.h(0.0)))

    def h_origin_ratio(self) -> float:
        """h(0) sigma mu^{2s+2} / 2, which tends to 1 for large mu."""
        return self.h_origin() * self.sigma * self.mu ** (2 * self.sigma + 2) / 2.0

    def h_origin_alt(self) -> float:
        """[(q1 f_{-mu} - 1)^{-1} q2 f_{-mu}]^2 - 1, the product form at z=0."""
        f = specfun.f_resolvent(-self.mu).value.real
        return (self.q2 * f / (self.q1 * f - 1.0)) ** 2 - 1.0

    def threshold_limit(self) -> float:
        """lim_{a -> mu} h(a) = -q2^2 f^L_{-2 mu} / q1 - 1  (the z1-side factor
        saturates at -1/q1 through the log divergence)."""
        return float(np.real(-self.q2**2 * self.f_l(-2.0 * self.mu) / self.q1 - 1.0))

    def curvature_origin(self, rel_step: float = 0.5) -> float:
        """h''(0) from the even function b -> h(ib)."""
        b0 = math.sqrt(2 * self.sigma) * self.mu ** (-self.sigma)
        d = rel_step * b0
        c = np.real(self.h(1j * d))
        return float(-2.0 * (c - self.h_origin()) / d**2)


@dataclass(frozen=True)
class EigenvalueReport:
    lambda_plus: complex
    lambda_minus: complex
    seed: float
    rel_dev_from_seed: float
    curvature_ratio: float
    r1: float
    r2: float
    scan_min_h: float
    scan_points: int
    verdicts: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {
            "lambda_plus": [self.lambda_plus.real, self.lambda_plus.imag],
            "lambda_minus": [self.lambda_minus.real, self.lambda_minus.imag],
            "seed": self.seed,
            "rel_dev_from_seed": self.rel_dev_from_seed,
            "curvature_ratio": self.curvature_ratio,
            "r1": self.r1,
            "r2": self.r2,
            "scan_min_h": self.scan_min_h,
            "scan_points": self.scan_points,
            "verdicts": self.verdicts,
        }
        return json.dumps(d, indent=2, sort_keys=True)


def find_imaginary_roots(df: DispersionFunction) -> tuple[float, float]:
    """The conjugate pair +- i b* with h(i b*) = 0, via a bracketed search in
    log b around the seed sqrt(2 sigma) mu^-sigma."""
    b0 = math.sqrt(2 * df.sigma) * df.mu ** (-df.sigma)

    def g(logb: float) -> float:
        val = df.h(1j * math.exp(logb))
        if abs(val.imag) > 1e-10 * max(1.0, abs(val.real)):
            raise NumericalError(f"h(ib) not numerically real: {val}")
        return val.real

    lo, hi = math.log(b0 / 3.0), math.log(min(3.0 * b0, 0.9 * df.mu))
    glo, ghi = g(lo), g(hi)
    if not (glo > 0 > ghi):
        raise NumericalError(
            f"imaginary-root bracket failed: h(i b0/3)={glo:.3e}, h(i 3b0)={ghi:.3e}"
        )
    logb = brentq(g, lo, hi, rtol=1e-14)
    return math.exp(logb), b0


def real_axis_scan(
    df: DispersionFunction, n_base: int = 10_000, margin: float = 1e-6
) -> dict:
    """Positivity of h on [-mu, mu] on a graded grid (dense near +-mu and the
    h1 roots), plus location of the roots r_j of f_{a_j} - c1."""
    mu = df.mu

    # r2 solves f_{-(a + mu)} = c1 for a in (0, mu); r1 = -r2 by symmetry
    def rr(a: float) -> float:
        return specfun.f_resolvent(-(a + mu)).value.real - df.c1

    r2 = brentq(rr, 0.0, mu * (1.0 - 1e-12), rtol=1e-13)
    r1 = -r2

    base = np.linspace(-mu + margin, mu - margin, n_base)
    # geometric accumulation toward the thresholds and around the r_j
    off = mu * np.power(10.0, -np.linspace(1, 9, 25))
    extra = np.concatenate([mu - off, -mu + off, r2 + np.linspace(-2, 2, 41), r1 + np.linspace(-2, 2, 41)])
    grid = np.unique(np.clip(np.concatenate([base, extra]), -mu + margin, mu - margin))

    hvals = np.array([np.real(df.h(float(a))) for a in grid])
    i_min = int(np.argmin(hvals))
    # h1 interior trend against -(mu^2-a^2)^{-1}(2s+1)^{-1} + c1^2, checked in
    # the central half of (r1, r2) where the model stays away from its zeros
    inner = grid[(grid > 0.5 * r1) & (grid < 0.5 * r2)]
    inner = inner[:: max(1, inner.size // 200)]
    h1v = np.array([np.real(df.h1(float(a))) for a in inner])
    model = -1.0 / ((mu**2 - inner**2) * (2 * df.sigma + 1)) + df.c1**2
    h1_rel_dev = float(np.max(np.abs(h1v - model) / np.abs(model))) if inner.size else float("nan")

    return {
        "all_positive": bool(np.all(hvals > 0.0)),
        "min_h": float(hvals[i_min]),
        "argmin": float(grid[i_min]),
        "n_points": int(grid.size),
        "r1": float(r1),
        "r2": float(r2),
        "r2_normalized": float(r2 * (df.sigma + 1) / (mu + df.sigma)),
        "r2_normalized_selfconsistent": float(r2 * (df.sigma + 1) / (df.sigma * (mu + 1.0))),
        "h1_interior_rel_dev": h1_rel_dev,
        "grid": grid,
        "h": hvals,
    }


def eigenvalue_report(profile: SolitonProfile) -> EigenvalueReport:
    df = DispersionFunction.from_profile(profile)
    b_star, seed = find_imaginary_roots(df)
    scan = real_axis_scan(df, n_base=2000)
    hpp = df.curvature_origin()
    curv_ratio = hpp * df.sigma**2 * df.mu**2 / 2.0
    return EigenvalueReport(
        lambda_plus=1j * b_star,
        lambda_minus=-1j * b_star,
        seed=seed,
        rel_dev_from_seed=abs(b_star - seed) / seed,
        curvature_ratio=float(curv_ratio),
        r1=scan["r1"],
        r2=scan["r2"],
        scan_min_h=scan["min_h"],
        scan_points=scan["n_points"],
        verdicts={
            "real_axis_positive": scan["all_positive"],
            "two_imaginary_roots": True,
        },
    )


# -- dense truncation oracles --------------------------------------------------

def matrix_spectrum_oracle(
    which: str, n: int, profile: SolitonProfile
) -> np.ndarray:
    """All eigenvalues of the dense 2(n+1) truncation (deterministic LAPACK)."""
    m = dense_h(which, n, profile.mu, profile.sigma, profile)
    return sla.eigvals(m)


def gap_eigenvalues(eigs: np.ndarray, mu: float, edge_margin: float = 0.05) -> np.ndarray:
    """Eigenvalues strictly inside the spectral gap (-mu, mu), away from the
    truncation-polluted edges."""
    keep = np.abs(eigs.real) < mu * (1.0 - edge_margin)
    return eigs[keep]


def smallest_singular_values(which: str, n: int, profile: SolitonProfile, k: int = 3) -> np.ndarray:
    m = dense_h(which, n, profile.mu, profile.sigma, profile)
    sv = sla.svdvals(m)
    return sv[-k:][::-1]


def _operator_two_norm(apply_fn, apply_adj_fn, dim: int, iters: int = 40, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    s = 0.0
    for _ in range(iters):
        w = apply_fn(v)
        v = apply_adj_fn(w)
        s = np.linalg.norm(v) ** 0.5
        v /= np.linalg.norm(v)
    return float(s)


def resolvent_convergence_check(
    sigma: int,
    mus=(20.0, 40.0, 80.0),
    n: int = 700,
    z_scale: float = 0.5,
) -> dict:
    """|| R^H_z - R^{H2}_z || at z = i mu/2 across a mu-doubling ladder.

    The raw difference carries the |z|^-2 prefactor of the resolvent bound,
    so the m(mu)-law comparison is made on the |z|^2-scaled quantity, which
    estimates ||U|| itself.  The paper's majorant chain
    ||R^H|| <= [1 - m/|z|]^{-1} / |z| is checked alongside.
    """
    rows = []
    for mu in mus:
        profile = solve_soliton(mu, sigma)
        z = 1j * z_scale * mu
        h2 = dense_h("H2", n, mu, sigma, profile).astype(complex)
        hh = dense_h("H", n, mu, sigma, profile).astype(complex)
        eye = np.eye(2 * (n + 1))
        r2 = np.linalg.solve(h2 - z * eye, eye)
        rh = np.linalg.solve(hh - z * eye, eye)
        d = rh - r2
        nd = _operator_two_norm(lambda v: d @ v, lambda v: d.conj().T @ v, d.shape[0])
        nrh = _operator_two_norm(lambda v: rh @ v, lambda v: rh.conj().T @ v, d.shape[0])
        lin = LinearizedOperator(mu, sigma, profile, "H")
        m_mu = lin.m_mu
        bound_ok = (m_mu < abs(z)) and (nrh <= (1.0 / (1.0 - m_mu / abs(z))) / abs(z) * (1.0 + 1e-8))
        rows.append(
            {
                "mu": mu,
                "norm_diff": nd,
                "scaled_diff": nd * abs(z) ** 2,
                "u_norm": lin.u_norm_exact(),
                "m_mu": m_mu,
                "norm_rh": nrh,
                "rh_bound_ok": bool(bound_ok),
            }
        )
    ratios = [
        rows[i + 1]["scaled_diff"] / rows[i]["scaled_diff"] for i in range(len(rows) - 1)
    ]
    m_law = 2.0 ** (-(2 * sigma - 1) / (2 * sigma))
    return {"rows": rows, "scaled_ratios": ratios, "m_law_ratio": m_law}


def h_dense_cross_check(profile: SolitonProfile, z: complex, n: int = 4000) -> dict:
    """h from the closed forms vs h from truncated-matrix scalar resolvents."""
    df = DispersionFunction.from_profile(profile)
    f1 = ro.truncated_resolvent_columns(z - profile.mu, df.q1, n, 0)[0, 0]
    f2 = ro.truncated_resolvent_columns(-z - profile.mu, df.q1, n, 0)[0, 0]
    h_dense = df.q2**2 * f1 * f2 - 1.0
    h_closed = df.h(z)
    return {"h_closed": h_closed, "h_dense": h_dense, "dev": abs(h_dense - h_closed)}
